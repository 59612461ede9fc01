#include "mpvad/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace mpvad {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatIeeeFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

struct ByteReader {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > size) throw FormatError(std::string("truncated WAV: ") + what);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v;
        std::memcpy(&v, data + pos, 4);
        pos += 4;
        return v;
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v;
        std::memcpy(&v, data + pos, 2);
        pos += 2;
        return v;
    }
    void tag(char out[4], const char* what) {
        need(4, what);
        std::memcpy(out, data + pos, 4);
        pos += 4;
    }
    void skip(std::size_t n, const char* what) {
        need(n, what);
        pos += n;
    }
};

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_u16(std::string& out, std::uint16_t v) { out.append(reinterpret_cast<const char*>(&v), 2); }

}  // namespace

AudioBuffer read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open WAV file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    ByteReader r{reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()};
    char tag[4];
    r.tag(tag, "RIFF header");
    if (std::memcmp(tag, "RIFF", 4) != 0) throw FormatError("not a RIFF file: " + path);
    r.u32("RIFF size");
    r.tag(tag, "WAVE tag");
    if (std::memcmp(tag, "WAVE", 4) != 0) throw FormatError("not a WAVE file: " + path);

    std::uint16_t format = 0, n_channels = 0, bits = 0;
    std::uint32_t sample_rate = 0;
    bool have_fmt = false;
    const std::uint8_t* payload = nullptr;
    std::size_t payload_size = 0;

    while (r.pos + 8 <= r.size) {
        r.tag(tag, "chunk id");
        const std::uint32_t chunk_size = r.u32("chunk size");
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            if (chunk_size < 16) throw FormatError("fmt chunk too small");
            const std::size_t fmt_start = r.pos;
            format = r.u16("format code");
            n_channels = r.u16("channel count");
            sample_rate = r.u32("sample rate");
            r.u32("byte rate");
            r.u16("block align");
            bits = r.u16("bits per sample");
            if (format == kFormatExtensible) {
                // Actual format code lives in the first two bytes of SubFormat.
                if (chunk_size < 40) throw FormatError("extensible fmt chunk too small");
                r.skip(2 + 2 + 4, "extensible header");
                format = r.u16("subformat code");
            }
            r.pos = fmt_start;
            r.skip(chunk_size + (chunk_size & 1), "fmt chunk body");
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            r.need(chunk_size, "data chunk body");
            payload = r.data + r.pos;
            payload_size = chunk_size;
            r.skip(chunk_size + (chunk_size & 1), "data chunk body");
        } else {
            r.skip(chunk_size + (chunk_size & 1), "chunk body");
        }
    }
    if (!have_fmt) throw FormatError("WAV has no fmt chunk: " + path);
    if (payload == nullptr) throw FormatError("WAV has no data chunk: " + path);
    if (n_channels == 0 || sample_rate == 0) throw FormatError("WAV fmt fields invalid: " + path);

    std::size_t bytes_per_sample;
    if (format == kFormatPcm && bits == 16) {
        bytes_per_sample = 2;
    } else if (format == kFormatIeeeFloat && bits == 32) {
        bytes_per_sample = 4;
    } else {
        throw FormatError("unsupported WAV encoding (format " + std::to_string(format) + ", " +
                          std::to_string(bits) + " bits): " + path);
    }

    const std::size_t frame_bytes = bytes_per_sample * n_channels;
    if (payload_size % frame_bytes != 0)
        throw FormatError("truncated WAV: data chunk is not a whole number of frames: " + path);
    const std::size_t n_frames = payload_size / frame_bytes;

    AudioBuffer buf(n_channels, n_frames, static_cast<int>(sample_rate));
    if (format == kFormatPcm) {
        for (std::size_t i = 0; i < n_frames; ++i) {
            for (int c = 0; c < n_channels; ++c) {
                std::int16_t v;
                std::memcpy(&v, payload + (i * n_channels + c) * 2, 2);
                buf.channels[c][i] = static_cast<float>(v) / 32768.0f;
            }
        }
    } else {
        for (std::size_t i = 0; i < n_frames; ++i) {
            for (int c = 0; c < n_channels; ++c) {
                float v;
                std::memcpy(&v, payload + (i * n_channels + c) * 4, 4);
                buf.channels[c][i] = v;
            }
        }
    }
    return buf;
}

void write_wav(const std::string& path, const AudioBuffer& buf, WavEncoding enc) {
    if (buf.num_channels() == 0 || buf.num_samples() == 0)
        throw FormatError("refusing to write empty audio buffer: " + path);
    for (const auto& ch : buf.channels)
        if (ch.size() != buf.num_samples())
            throw ShapeError("channels of unequal length in write_wav");

    const int n_channels = buf.num_channels();
    const std::size_t n_frames = buf.num_samples();
    const std::uint16_t bits = (enc == WavEncoding::pcm16) ? 16 : 32;
    const std::uint16_t block_align = static_cast<std::uint16_t>(n_channels * bits / 8);
    const std::uint32_t data_size = static_cast<std::uint32_t>(n_frames * block_align);

    std::string out;
    out.reserve(44 + data_size);
    out.append("RIFF");
    put_u32(out, 36 + data_size);
    out.append("WAVE");
    out.append("fmt ");
    put_u32(out, 16);
    put_u16(out, enc == WavEncoding::pcm16 ? kFormatPcm : kFormatIeeeFloat);
    put_u16(out, static_cast<std::uint16_t>(n_channels));
    put_u32(out, static_cast<std::uint32_t>(buf.sample_rate));
    put_u32(out, static_cast<std::uint32_t>(buf.sample_rate) * block_align);
    put_u16(out, block_align);
    put_u16(out, bits);
    out.append("data");
    put_u32(out, data_size);

    if (enc == WavEncoding::pcm16) {
        for (std::size_t i = 0; i < n_frames; ++i) {
            for (int c = 0; c < n_channels; ++c) {
                const double x = std::clamp(static_cast<double>(buf.channels[c][i]), -1.0, 1.0);
                const long q = std::lround(x * 32768.0);
                const std::int16_t v = static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L));
                out.append(reinterpret_cast<const char*>(&v), 2);
            }
        }
    } else {
        for (std::size_t i = 0; i < n_frames; ++i) {
            for (int c = 0; c < n_channels; ++c) {
                const float v = buf.channels[c][i];
                out.append(reinterpret_cast<const char*>(&v), 4);
            }
        }
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed: " + path);
}

AudioBuffer resample(const AudioBuffer& buf, int target_rate) {
    if (target_rate <= 0) throw Error("target_rate must be positive");
    if (buf.sample_rate == target_rate) return buf;

    const double src = static_cast<double>(buf.sample_rate);
    const double dst = static_cast<double>(target_rate);
    const std::size_t in_len = buf.num_samples();
    const std::size_t out_len =
        static_cast<std::size_t>(std::llround(static_cast<double>(in_len) * dst / src));

    // Anti-aliasing cutoff at the narrower Nyquist. The sinc stretches by
    // 1/cutoff when downsampling so the kernel keeps 32 lobes per side.
    const double cutoff = std::min(1.0, dst / src);
    const double support = 32.0 / cutoff;  // input samples per side

    AudioBuffer out(buf.num_channels(), out_len, target_rate);
    for (int c = 0; c < buf.num_channels(); ++c) {
        const std::vector<float>& x = buf.channels[c];
        std::vector<float>& y = out.channels[c];
        for (std::size_t n = 0; n < out_len; ++n) {
            const double t = static_cast<double>(n) * src / dst;
            const long k_lo = static_cast<long>(std::ceil(t - support));
            const long k_hi = static_cast<long>(std::floor(t + support));
            double acc = 0.0;
            for (long k = std::max(0L, k_lo);
                 k <= std::min(static_cast<long>(in_len) - 1, k_hi); ++k) {
                const double u = (t - static_cast<double>(k)) * cutoff;  // in [-32, 32]
                double kernel;
                if (std::abs(u) < 1e-12) {
                    kernel = 1.0;
                } else {
                    const double pu = M_PI * u;
                    kernel = std::sin(pu) / pu;
                }
                const double window = 0.5 * (1.0 + std::cos(M_PI * u / 32.0));
                acc += static_cast<double>(x[static_cast<std::size_t>(k)]) * kernel * window *
                       cutoff;
            }
            y[n] = static_cast<float>(acc);
        }
    }
    return out;
}

}  // namespace mpvad
