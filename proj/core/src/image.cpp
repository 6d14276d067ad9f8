// Copyright 2026 The pam50 Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "pam50/image.h"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "pam50/errors.h"

namespace pam50 {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr OpenFile(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return f;
}

RgbImage ReadPng(const std::filesystem::path& path) {
  FilePtr file = OpenFile(path, "rb");
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kIo, "libpng initialization failed");
  }
  RgbImage image;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kIo, "corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);

  const png_byte color_type = png_get_color_type(png, info);
  const png_byte bit_depth = png_get_bit_depth(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY ||
      color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  image = RgbImage(static_cast<int>(png_get_image_width(png, info)),
                   static_cast<int>(png_get_image_height(png, info)));
  rows.resize(image.height);
  for (int y = 0; y < image.height; ++y) rows[y] = image.at(0, y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void WritePng(const RgbImage& image, const std::filesystem::path& path,
              int level) {
  FilePtr file = OpenFile(path, "wb");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, "libpng initialization failed");
  }
  std::vector<png_bytep> rows(image.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, "PNG write failed: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, std::clamp(level, 0, 9));
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    rows[y] = const_cast<png_bytep>(image.at(0, y));
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string PpmToken(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

RgbImage ReadPpm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  if (PpmToken(in) != "P6") {
    throw Error(ErrorCode::kIo, "not a binary PPM: " + path.string());
  }
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(PpmToken(in));
    h = std::stoi(PpmToken(in));
    maxval = std::stoi(PpmToken(in));
  } catch (const std::exception&) {
    throw Error(ErrorCode::kIo, "bad PPM header: " + path.string());
  }
  if (w < 0 || h < 0 || maxval != 255) {
    throw Error(ErrorCode::kIo, "unsupported PPM (need maxval 255): " + path.string());
  }
  RgbImage image(w, h);
  in.read(reinterpret_cast<char*>(image.pixels.data()),
          static_cast<std::streamsize>(image.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(image.pixels.size())) {
    throw Error(ErrorCode::kIo, "truncated PPM: " + path.string());
  }
  return image;
}

void WritePpm(const RgbImage& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
}

}  // namespace

RgbImage RgbImage::Crop(int x, int y, int w, int h) const {
  RgbImage out(w, h);
  for (int row = 0; row < h; ++row) {
    std::memcpy(out.at(0, row), at(x, y + row), static_cast<size_t>(w) * 3);
  }
  return out;
}

void RgbImage::Paste(const RgbImage& src, int x, int y) {
  for (int row = 0; row < src.height; ++row) {
    std::memcpy(at(x, y + row), src.at(0, row), static_cast<size_t>(src.width) * 3);
  }
}

RgbImage ReadImage(const std::filesystem::path& path) {
  unsigned char sig[8] = {};
  {
    FilePtr f = OpenFile(path, "rb");
    if (std::fread(sig, 1, sizeof(sig), f.get()) < 2) {
      throw Error(ErrorCode::kIo, "unreadable image: " + path.string());
    }
  }
  if (png_sig_cmp(sig, 0, 8) == 0) return ReadPng(path);
  if (sig[0] == 'P' && sig[1] == '6') return ReadPpm(path);
  throw Error(ErrorCode::kIo, "unsupported image format: " + path.string());
}

void WriteImage(const RgbImage& image, const std::filesystem::path& path,
                int png_compression_level) {
  if (path.extension() == ".png") {
    WritePng(image, path, png_compression_level);
  } else {
    WritePpm(image, path);
  }
}

}  // namespace pam50
