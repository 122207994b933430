#include <tiffio.h>

#include <algorithm>
#include <cstdarg>
#include <list>
#include <mutex>
#include <unordered_map>

#include "slidepipe/errors.hpp"
#include "slidepipe/internal/tiff_io.hpp"

namespace slidepipe {

namespace {

void tiff_quiet_handler(const char*, const char*, va_list) {}

struct TiffCloser {
    void operator()(TIFF* t) const {
        if (t != nullptr) TIFFClose(t);
    }
};

}  // namespace

// Windowed reads over striped or tiled baseline TIFF. libtiff handles are
// not reentrant, so one mutex serializes decoding; a small block cache keeps
// overlapping windows from re-decoding the same strip/tile every time.
class TiffRasterReader final : public RasterReader {
public:
    explicit TiffRasterReader(const std::filesystem::path& path) : path_(path.string()) {
        TIFFSetWarningHandler(tiff_quiet_handler);
        tiff_.reset(TIFFOpen(path_.c_str(), "r"));
        if (!tiff_) throw CorruptFile("tiff: cannot open '" + path_ + "'");

        std::uint32_t w = 0, h = 0;
        if (TIFFGetField(tiff_.get(), TIFFTAG_IMAGEWIDTH, &w) != 1 ||
            TIFFGetField(tiff_.get(), TIFFTAG_IMAGELENGTH, &h) != 1 || w == 0 || h == 0) {
            throw CorruptFile("tiff: missing dimensions in '" + path_ + "'");
        }
        extent_ = RasterExtent{static_cast<std::int64_t>(w), static_cast<std::int64_t>(h)};

        std::uint16_t bits = 8, samples = 1, planar = PLANARCONFIG_CONTIG, sample_format = SAMPLEFORMAT_UINT;
        TIFFGetFieldDefaulted(tiff_.get(), TIFFTAG_BITSPERSAMPLE, &bits);
        TIFFGetFieldDefaulted(tiff_.get(), TIFFTAG_SAMPLESPERPIXEL, &samples);
        TIFFGetFieldDefaulted(tiff_.get(), TIFFTAG_PLANARCONFIG, &planar);
        TIFFGetFieldDefaulted(tiff_.get(), TIFFTAG_SAMPLEFORMAT, &sample_format);
        if (bits != 8 || sample_format != SAMPLEFORMAT_UINT) {
            throw UnsupportedFormat("tiff: only 8-bit unsigned samples supported ('" + path_ + "')");
        }
        if (samples != 1 && samples != 3) {
            throw UnsupportedFormat("tiff: " + std::to_string(samples) +
                                    " samples per pixel unsupported ('" + path_ + "')");
        }
        if (planar != PLANARCONFIG_CONTIG) {
            throw UnsupportedFormat("tiff: planar layout unsupported ('" + path_ + "')");
        }
        channels_ = samples;

        tiled_ = TIFFIsTiled(tiff_.get()) != 0;
        if (tiled_) {
            std::uint32_t tw = 0, th = 0;
            TIFFGetField(tiff_.get(), TIFFTAG_TILEWIDTH, &tw);
            TIFFGetField(tiff_.get(), TIFFTAG_TILELENGTH, &th);
            if (tw == 0 || th == 0) throw CorruptFile("tiff: bad tile geometry in '" + path_ + "'");
            block_w_ = tw;
            block_h_ = th;
            block_bytes_ = TIFFTileSize64(tiff_.get());
        } else {
            std::uint32_t rps = 0;
            TIFFGetFieldDefaulted(tiff_.get(), TIFFTAG_ROWSPERSTRIP, &rps);
            if (rps == 0 || rps > h) rps = h;
            block_w_ = w;
            block_h_ = rps;
            block_bytes_ = TIFFStripSize64(tiff_.get());
        }
    }

    RasterExtent extent() const override { return extent_; }
    int channels() const override { return channels_; }

protected:
    PixelBlock read_inside(std::int64_t x, std::int64_t y, std::int64_t w,
                           std::int64_t h) const override {
        PixelBlock out(w, h, channels_);
        std::lock_guard lk(mutex_);

        const std::int64_t by0 = y / block_h_;
        const std::int64_t by1 = (y + h - 1) / block_h_;
        const std::int64_t bx0 = x / block_w_;
        const std::int64_t bx1 = (x + w - 1) / block_w_;
        for (std::int64_t by = by0; by <= by1; ++by) {
            for (std::int64_t bx = bx0; bx <= bx1; ++bx) {
                const std::vector<std::uint8_t>& block = load_block(bx, by);
                // Intersection of the window with this block.
                const std::int64_t px0 = std::max(x, bx * block_w_);
                const std::int64_t px1 = std::min(x + w, (bx + 1) * block_w_);
                const std::int64_t py0 = std::max(y, by * block_h_);
                const std::int64_t py1 = std::min(y + h, (by + 1) * block_h_);
                const std::size_t copy_bytes =
                    static_cast<std::size_t>(px1 - px0) * static_cast<std::size_t>(channels_);
                for (std::int64_t py = py0; py < py1; ++py) {
                    const std::uint8_t* src =
                        block.data() +
                        (static_cast<std::size_t>(py - by * block_h_) *
                             static_cast<std::size_t>(block_w_) +
                         static_cast<std::size_t>(px0 - bx * block_w_)) *
                            static_cast<std::size_t>(channels_);
                    std::uint8_t* dst =
                        out.pixels.data() +
                        (static_cast<std::size_t>(py - y) * static_cast<std::size_t>(w) +
                         static_cast<std::size_t>(px0 - x)) *
                            static_cast<std::size_t>(channels_);
                    std::copy(src, src + copy_bytes, dst);
                }
            }
        }
        return out;
    }

private:
    // Cache key: block index in row-major block space.
    const std::vector<std::uint8_t>& load_block(std::int64_t bx, std::int64_t by) const {
        const std::int64_t blocks_across = (extent_.width + block_w_ - 1) / block_w_;
        const std::int64_t key = by * blocks_across + bx;
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;

        if (cache_.size() >= kCacheBlocks) {
            cache_.erase(cache_order_.front());
            cache_order_.pop_front();
        }

        std::vector<std::uint8_t> data(static_cast<std::size_t>(block_bytes_));
        if (tiled_) {
            if (TIFFReadTile(tiff_.get(), data.data(), static_cast<std::uint32_t>(bx * block_w_),
                             static_cast<std::uint32_t>(by * block_h_), 0, 0) < 0) {
                throw CorruptFile("tiff: tile read failed in '" + path_ + "'");
            }
        } else {
            const auto strip = static_cast<std::uint32_t>(by);
            const tmsize_t n =
                TIFFReadEncodedStrip(tiff_.get(), strip, data.data(), static_cast<tmsize_t>(data.size()));
            if (n < 0) throw CorruptFile("tiff: strip read failed in '" + path_ + "'");
        }

        cache_order_.push_back(key);
        return cache_.emplace(key, std::move(data)).first->second;
    }

    static constexpr std::size_t kCacheBlocks = 16;

    std::string path_;
    std::unique_ptr<TIFF, TiffCloser> tiff_;
    RasterExtent extent_;
    int channels_ = 0;
    bool tiled_ = false;
    std::int64_t block_w_ = 0;
    std::int64_t block_h_ = 0;
    std::uint64_t block_bytes_ = 0;

    mutable std::mutex mutex_;
    mutable std::unordered_map<std::int64_t, std::vector<std::uint8_t>> cache_;
    mutable std::list<std::int64_t> cache_order_;
};

std::unique_ptr<RasterReader> open_tiff(const std::filesystem::path& path) {
    return std::make_unique<TiffRasterReader>(path);
}

void write_tiff_striped(const std::filesystem::path& path, const PixelBlock& image,
                        std::uint32_t rows_per_strip) {
    TIFFSetWarningHandler(tiff_quiet_handler);
    std::unique_ptr<TIFF, TiffCloser> tiff(TIFFOpen(path.string().c_str(), "w"));
    if (!tiff) throw IoError("tiff: cannot create '" + path.string() + "'");

    TIFFSetField(tiff.get(), TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(image.width));
    TIFFSetField(tiff.get(), TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(image.height));
    TIFFSetField(tiff.get(), TIFFTAG_BITSPERSAMPLE, 8);
    TIFFSetField(tiff.get(), TIFFTAG_SAMPLESPERPIXEL, static_cast<std::uint16_t>(image.channels));
    TIFFSetField(tiff.get(), TIFFTAG_ROWSPERSTRIP, rows_per_strip);
    TIFFSetField(tiff.get(), TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
    TIFFSetField(tiff.get(), TIFFTAG_PHOTOMETRIC,
                 image.channels == 1 ? PHOTOMETRIC_MINISBLACK : PHOTOMETRIC_RGB);
    TIFFSetField(tiff.get(), TIFFTAG_COMPRESSION, COMPRESSION_NONE);

    const std::size_t row_bytes =
        static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.channels);
    for (std::int64_t r = 0; r < image.height; ++r) {
        if (TIFFWriteScanline(tiff.get(),
                              const_cast<std::uint8_t*>(image.pixels.data() +
                                                        static_cast<std::size_t>(r) * row_bytes),
                              static_cast<std::uint32_t>(r), 0) < 0) {
            throw IoError("tiff: write failed for '" + path.string() + "'");
        }
    }
}

void write_tiff_tiled(const std::filesystem::path& path, const PixelBlock& image,
                      std::uint32_t tile_w, std::uint32_t tile_h) {
    TIFFSetWarningHandler(tiff_quiet_handler);
    std::unique_ptr<TIFF, TiffCloser> tiff(TIFFOpen(path.string().c_str(), "w"));
    if (!tiff) throw IoError("tiff: cannot create '" + path.string() + "'");

    TIFFSetField(tiff.get(), TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(image.width));
    TIFFSetField(tiff.get(), TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(image.height));
    TIFFSetField(tiff.get(), TIFFTAG_BITSPERSAMPLE, 8);
    TIFFSetField(tiff.get(), TIFFTAG_SAMPLESPERPIXEL, static_cast<std::uint16_t>(image.channels));
    TIFFSetField(tiff.get(), TIFFTAG_TILEWIDTH, tile_w);
    TIFFSetField(tiff.get(), TIFFTAG_TILELENGTH, tile_h);
    TIFFSetField(tiff.get(), TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
    TIFFSetField(tiff.get(), TIFFTAG_PHOTOMETRIC,
                 image.channels == 1 ? PHOTOMETRIC_MINISBLACK : PHOTOMETRIC_RGB);
    TIFFSetField(tiff.get(), TIFFTAG_COMPRESSION, COMPRESSION_NONE);

    const int nc = image.channels;
    std::vector<std::uint8_t> tile(static_cast<std::size_t>(tile_w) *
                                   static_cast<std::size_t>(tile_h) * static_cast<std::size_t>(nc));
    for (std::int64_t ty = 0; ty < image.height; ty += tile_h) {
        for (std::int64_t tx = 0; tx < image.width; tx += tile_w) {
            std::fill(tile.begin(), tile.end(), 0);
            const std::int64_t copy_h = std::min<std::int64_t>(tile_h, image.height - ty);
            const std::int64_t copy_w = std::min<std::int64_t>(tile_w, image.width - tx);
            for (std::int64_t r = 0; r < copy_h; ++r) {
                const std::uint8_t* src =
                    image.pixels.data() +
                    ((static_cast<std::size_t>(ty + r) * static_cast<std::size_t>(image.width) +
                      static_cast<std::size_t>(tx)) *
                     static_cast<std::size_t>(nc));
                std::copy(src, src + static_cast<std::size_t>(copy_w) * nc,
                          tile.data() + static_cast<std::size_t>(r) * tile_w * nc);
            }
            if (TIFFWriteTile(tiff.get(), tile.data(), static_cast<std::uint32_t>(tx),
                              static_cast<std::uint32_t>(ty), 0, 0) < 0) {
                throw IoError("tiff: tile write failed for '" + path.string() + "'");
            }
        }
    }
}

}  // namespace slidepipe
