#include <png.h>

#include <csetjmp>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "chartex/chartgen/raster.h"

namespace chartex::gen {

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void flush_nothing(png_structp) {}

struct ReadCursor {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

void read_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + len > cur->bytes->size()) png_error(png, "truncated stream");
  std::memcpy(data, cur->bytes->data() + cur->pos, len);
  cur->pos += len;
}

// libpng reports errors by longjmp; these helpers keep C++ objects with
// destructors out of the frames between setjmp and the jump.
bool write_rows(png_structp png, png_infop info, const Image& img) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_set_IHDR(png, info, img.width(), img.height(), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  const std::uint8_t* base = img.data().data();
  for (int y = 0; y < img.height(); ++y) {
    png_write_row(png, const_cast<png_bytep>(base + static_cast<std::size_t>(y) * img.width() * 3));
  }
  png_write_end(png, nullptr);
  return true;
}

bool read_header(png_structp png, png_infop info, int* w, int* h) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  *w = static_cast<int>(png_get_image_width(png, info));
  *h = static_cast<int>(png_get_image_height(png, info));
  return png_get_rowbytes(png, info) == static_cast<png_size_t>(*w) * 3;
}

bool read_rows(png_structp png, std::uint8_t* dst, int w, int h) {
  if (setjmp(png_jmpbuf(png))) return false;
  for (int y = 0; y < h; ++y) png_read_row(png, dst + static_cast<std::size_t>(y) * w * 3, nullptr);
  return true;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& img) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw std::runtime_error("png: out of memory");
  png_infop info = png_create_info_struct(png);
  png_set_write_fn(png, &out, append_bytes, flush_nothing);
  const bool ok = info != nullptr && write_rows(png, info, img);
  png_destroy_write_struct(&png, &info);
  if (!ok) throw std::runtime_error("png: encode failed");
  return out;
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw std::runtime_error("png: bad signature");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw std::runtime_error("png: out of memory");
  png_infop info = png_create_info_struct(png);
  ReadCursor cur{&bytes, 0};
  png_set_read_fn(png, &cur, read_bytes);
  int w = 0;
  int h = 0;
  Image img;
  bool ok = info != nullptr && read_header(png, info, &w, &h);
  if (ok) {
    img = Image(w, h);
    ok = read_rows(png, img.data().data(), w, h);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw std::runtime_error("png: decode failed");
  return img;
}

void write_png(const std::string& path, const Image& img) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

Image read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

}  // namespace chartex::gen
