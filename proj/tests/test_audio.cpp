#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "mpvad/audio.hpp"

using namespace mpvad;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "mpvad_test_audio";
    fs::create_directories(dir);
    return (dir / name).string();
}

// Hand-assembled WAV bytes for parser edge cases.
std::string wav_header(std::uint16_t format, std::uint16_t channels, std::uint32_t rate,
                       std::uint16_t bits, const std::string& payload) {
    std::string out;
    const auto u32 = [&](std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); };
    const auto u16 = [&](std::uint16_t v) { out.append(reinterpret_cast<const char*>(&v), 2); };
    out.append("RIFF");
    u32(static_cast<std::uint32_t>(36 + payload.size()));
    out.append("WAVE");
    out.append("fmt ");
    u32(16);
    u16(format);
    u16(channels);
    u32(rate);
    u32(rate * channels * bits / 8);
    u16(static_cast<std::uint16_t>(channels * bits / 8));
    u16(bits);
    out.append("data");
    u32(static_cast<std::uint32_t>(payload.size()));
    out.append(payload);
    return out;
}

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("pcm16 sample scaling uses /32768") {
    const std::int16_t samples[3] = {16384, -32768, 32767};
    std::string payload(reinterpret_cast<const char*>(samples), 6);
    const std::string path = temp_path("pcm16_scale.wav");
    write_bytes(path, wav_header(1, 1, 16000, 16, payload));

    const AudioBuffer buf = read_wav(path);
    REQUIRE(buf.num_channels() == 1);
    REQUIRE(buf.num_samples() == 3);
    CHECK(buf.channels[0][0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(buf.channels[0][1] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(buf.channels[0][2] == doctest::Approx(32767.0 / 32768.0).epsilon(1e-9));
}

TEST_CASE("float32 write/read round trip is bit identical") {
    AudioBuffer buf(2, 777, 16000);
    std::uint32_t state = 123;
    for (auto& ch : buf.channels)
        for (float& s : ch) {
            state = state * 1664525u + 1013904223u;
            s = static_cast<float>(static_cast<std::int32_t>(state)) / 4.0e9f;
        }
    const std::string path = temp_path("roundtrip_f32.wav");
    write_wav(path, buf, WavEncoding::float32);
    const AudioBuffer back = read_wav(path);
    REQUIRE(back.num_channels() == 2);
    REQUIRE(back.num_samples() == 777);
    CHECK(back.sample_rate == 16000);
    for (int c = 0; c < 2; ++c)
        CHECK(std::memcmp(back.channels[c].data(), buf.channels[c].data(), 777 * 4) == 0);
}

TEST_CASE("pcm16 write quantizes within half a step and clamps") {
    AudioBuffer buf(1, 3, 16000);
    buf.channels[0] = {0.5f, 1.7f, -2.0f};
    const std::string path = temp_path("pcm16_write.wav");
    write_wav(path, buf, WavEncoding::pcm16);
    const AudioBuffer back = read_wav(path);
    CHECK(std::abs(back.channels[0][0] - 0.5f) <= 1.0f / 32768.0f);
    CHECK(back.channels[0][1] == doctest::Approx(32767.0 / 32768.0));  // clamped
    CHECK(back.channels[0][2] == doctest::Approx(-1.0));
}

TEST_CASE("read_wav error cases are distinct") {
    CHECK_THROWS_AS(read_wav(temp_path("does_not_exist.wav")), IoError);

    // 24-bit PCM is unsupported
    const std::string bad_enc = temp_path("pcm24.wav");
    write_bytes(bad_enc, wav_header(1, 1, 16000, 24, std::string(6, '\0')));
    CHECK_THROWS_AS(read_wav(bad_enc), FormatError);

    // data chunk header claims more bytes than the file holds
    const std::int16_t samples[4] = {1, 2, 3, 4};
    std::string good =
        wav_header(1, 1, 16000, 16, std::string(reinterpret_cast<const char*>(samples), 8));
    good.resize(good.size() - 5);
    const std::string truncated = temp_path("truncated.wav");
    write_bytes(truncated, good);
    CHECK_THROWS_AS(read_wav(truncated), FormatError);

    // not RIFF at all
    const std::string garbage = temp_path("garbage.wav");
    write_bytes(garbage, "this is not audio");
    CHECK_THROWS_AS(read_wav(garbage), FormatError);
}

TEST_CASE("write_wav rejects unwritable path") {
    AudioBuffer buf(1, 4, 16000);
    buf.channels[0] = {0.1f, 0.2f, 0.3f, 0.4f};
    CHECK_THROWS_AS(write_wav("/nonexistent_dir/x.wav", buf, WavEncoding::float32), IoError);
}

TEST_CASE("resample length and identity") {
    AudioBuffer buf(1, 48000, 48000);
    for (std::size_t i = 0; i < 48000; ++i)
        buf.channels[0][i] = static_cast<float>(std::sin(2.0 * M_PI * 440.0 * i / 48000.0));

    const AudioBuffer down = resample(buf, 16000);
    CHECK(down.num_samples() == 16000);
    CHECK(down.sample_rate == 16000);
    // duration preserved within one sample period
    CHECK(std::abs(down.duration_s() - buf.duration_s()) <= 1.0 / 16000.0);

    const AudioBuffer same = resample(buf, 48000);
    REQUIRE(same.num_samples() == buf.num_samples());
    CHECK(std::memcmp(same.channels[0].data(), buf.channels[0].data(), 48000 * 4) == 0);
}

TEST_CASE("1 kHz sine survives 48k -> 16k resampling against the analytic oracle") {
    const double freq = 1000.0;
    AudioBuffer buf(1, 48000, 48000);
    for (std::size_t i = 0; i < 48000; ++i)
        buf.channels[0][i] = static_cast<float>(std::sin(2.0 * M_PI * freq * i / 48000.0));

    const AudioBuffer out = resample(buf, 16000);
    REQUIRE(out.num_samples() == 16000);
    // trim the filter support at both edges
    const std::size_t trim = 200;
    double worst = 0.0;
    for (std::size_t n = trim; n < out.num_samples() - trim; ++n) {
        const double expected = std::sin(2.0 * M_PI * freq * n / 16000.0);
        worst = std::max(worst, std::abs(expected - static_cast<double>(out.channels[0][n])));
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("multichannel interleaving round trips") {
    AudioBuffer buf(4, 100, 16000);
    for (int c = 0; c < 4; ++c)
        for (std::size_t i = 0; i < 100; ++i)
            buf.channels[c][i] = static_cast<float>(c) + static_cast<float>(i) * 1e-3f;
    const std::string path = temp_path("four_channel.wav");
    write_wav(path, buf, WavEncoding::float32);
    const AudioBuffer back = read_wav(path);
    REQUIRE(back.num_channels() == 4);
    for (int c = 0; c < 4; ++c)
        CHECK(back.channels[c][99] == doctest::Approx(buf.channels[c][99]));
}
