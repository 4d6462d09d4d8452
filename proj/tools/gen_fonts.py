#!/usr/bin/env python3
"""Rasterizes DejaVu faces into the 1-bit glyph tables embedded by chartgen.

Usage: tools/gen_fonts.py > src/chartgen/font_data.inc
"""
import sys

from PIL import Image, ImageDraw, ImageFont

FACES = [
    ("sans", "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf"),
    ("serif", "/usr/share/fonts/truetype/dejavu/DejaVuSerif.ttf"),
    ("mono", "/usr/share/fonts/truetype/dejavu/DejaVuSansMono.ttf"),
]
SIZES = [9, 11, 13, 16, 20, 24]
FIRST, LAST = 32, 126


def glyph(font, ch):
    left, top, right, bottom = font.getbbox(ch, anchor="ls")
    advance = int(round(font.getlength(ch)))
    w, h = max(0, right - left), max(0, bottom - top)
    rows = []
    if w and h:
        img = Image.new("1", (w, h), 0)
        d = ImageDraw.Draw(img)
        d.fontmode = "1"
        d.text((-left, -top), ch, font=font, fill=1, anchor="ls")
        px = img.load()
        for y in range(h):
            bits = [1 if px[x, y] else 0 for x in range(w)]
            row = bytearray((w + 7) // 8)
            for x, b in enumerate(bits):
                if b:
                    row[x // 8] |= 0x80 >> (x % 8)
            rows.append(bytes(row))
    return advance, left, top, w, h, b"".join(rows)


def main():
    out = sys.stdout
    out.write("// Generated by tools/gen_fonts.py from the DejaVu fonts. Do not edit.\n")
    out.write("// DejaVu fonts: Bitstream Vera license, see README.\n\n")
    tables = []
    for face, path in FACES:
        for size in SIZES:
            font = ImageFont.truetype(path, size)
            ascent, descent = font.getmetrics()
            blob = bytearray()
            metrics = []
            for c in range(FIRST, LAST + 1):
                adv, xo, yo, w, h, bits = glyph(font, chr(c))
                metrics.append((adv, xo, yo, w, h, len(blob)))
                blob += bits
            name = f"k_{face}_{size}"
            out.write(f"inline constexpr std::uint8_t {name}_bits[] = {{")
            for i, b in enumerate(blob):
                if i % 24 == 0:
                    out.write("\n    ")
                out.write(f"0x{b:02x},")
            out.write("\n    0x00};\n")
            out.write(f"inline constexpr GlyphMetrics {name}_glyphs[] = {{\n")
            for m in metrics:
                out.write("    {%d, %d, %d, %d, %d, %d},\n" % m)
            out.write("};\n\n")
            tables.append((face, size, ascent, descent, name))
    out.write("inline constexpr BitmapFontData kBitmapFonts[] = {\n")
    for face, size, ascent, descent, name in tables:
        out.write(f'    {{"{face}", {size}, {ascent}, {descent}, {name}_glyphs, {name}_bits}},\n')
    out.write("};\n")


if __name__ == "__main__":
    main()
