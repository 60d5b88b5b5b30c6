#include "diar/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "diar/error.hpp"

namespace diar {

namespace {

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xFFFE;

uint32_t read_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0]) | static_cast<uint16_t>(p[1] << 8);
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 24) & 0xFF));
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xFF));
}

float clamp_sample(float v, int* clipped) {
    if (v > 1.0f) {
        if (clipped) ++*clipped;
        return 1.0f;
    }
    if (v < -1.0f) {
        if (clipped) ++*clipped;
        return -1.0f;
    }
    return v;
}

} // namespace

AudioBuffer load_wav(const std::string& path, int* clipped_count) {
    if (clipped_count) *clipped_count = 0;

    std::ifstream file(path, std::ios::binary);
    if (!file)
        raise(errc::io_error, "cannot open WAV file: " + path);

    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(file)),
                               std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        raise(errc::unsupported_format, "not a RIFF/WAVE file: " + path);

    uint16_t format = 0;
    uint16_t channels = 0;
    uint32_t sample_rate = 0;
    uint16_t bits = 0;
    bool have_fmt = false;

    const uint8_t* data = nullptr;
    uint32_t data_size = 0;

    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const uint8_t* chunk = bytes.data() + pos;
        uint32_t chunk_size = read_u32(chunk + 4);
        size_t body = pos + 8;

        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (body + 16 > bytes.size() || chunk_size < 16)
                raise(errc::truncated_data, "truncated fmt chunk: " + path);
            const uint8_t* f = bytes.data() + body;
            format = read_u16(f);
            channels = read_u16(f + 2);
            sample_rate = read_u32(f + 4);
            bits = read_u16(f + 14);
            if (format == kFormatExtensible) {
                // Subformat GUID starts at offset 24; its first two bytes
                // carry the base format tag.
                if (chunk_size < 40 || body + 26 > bytes.size())
                    raise(errc::truncated_data, "truncated extensible fmt chunk: " + path);
                format = read_u16(f + 24);
            }
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = bytes.data() + body;
            data_size = chunk_size;
            if (body + data_size > bytes.size())
                raise(errc::truncated_data, "truncated data chunk: " + path);
        }
        pos = body + chunk_size + (chunk_size & 1);
    }

    if (!have_fmt || data == nullptr)
        raise(errc::unsupported_format, "missing fmt or data chunk: " + path);
    if (channels == 0 || sample_rate == 0)
        raise(errc::unsupported_format, "invalid fmt chunk: " + path);
    if (format != kFormatPcm && format != kFormatFloat)
        raise(errc::unsupported_format,
              "unsupported WAV encoding (format tag " + std::to_string(format) + "): " + path);
    if (format == kFormatFloat && bits != 32)
        raise(errc::unsupported_format,
              "unsupported float WAV width " + std::to_string(bits) + ": " + path);
    if (format == kFormatPcm && bits != 8 && bits != 16 && bits != 24 && bits != 32)
        raise(errc::unsupported_format,
              "unsupported PCM width " + std::to_string(bits) + ": " + path);

    const uint32_t bytes_per_sample = bits / 8;
    const uint32_t n_samples = data_size / bytes_per_sample;

    AudioBuffer out;
    out.sample_rate = static_cast<int>(sample_rate);
    out.channels = channels;
    out.samples.resize(n_samples);

    for (uint32_t i = 0; i < n_samples; ++i) {
        const uint8_t* s = data + static_cast<size_t>(i) * bytes_per_sample;
        float v = 0.0f;
        if (format == kFormatFloat) {
            float raw;
            std::memcpy(&raw, s, 4);
            v = std::isfinite(raw) ? raw : 0.0f;
        } else if (bits == 8) {
            v = (static_cast<int>(s[0]) - 128) / 128.0f;
        } else if (bits == 16) {
            int16_t raw = static_cast<int16_t>(read_u16(s));
            v = static_cast<float>(raw) / 32768.0f;
        } else if (bits == 24) {
            int32_t raw = static_cast<int32_t>(s[0]) | (static_cast<int32_t>(s[1]) << 8) |
                          (static_cast<int32_t>(static_cast<int8_t>(s[2])) << 16);
            v = static_cast<float>(raw) / 8388608.0f;
        } else { // 32-bit PCM
            int32_t raw = static_cast<int32_t>(read_u32(s));
            v = static_cast<float>(static_cast<double>(raw) / 2147483648.0);
        }
        out.samples[i] = clamp_sample(v, clipped_count);
    }
    return out;
}

void save_wav(const AudioBuffer& buffer, const std::string& path, WavFormat format) {
    if (buffer.sample_rate <= 0 || buffer.channels <= 0)
        raise(errc::validation, "audio buffer needs positive sample rate and channel count");

    const uint16_t bits = format == WavFormat::pcm16 ? 16 : 32;
    const uint16_t tag = format == WavFormat::pcm16 ? kFormatPcm : kFormatFloat;
    const uint32_t data_size =
        static_cast<uint32_t>(buffer.samples.size()) * (bits / 8);

    std::vector<uint8_t> out;
    out.reserve(44 + data_size);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    put_u32(out, 36 + data_size);
    out.insert(out.end(), {'W', 'A', 'V', 'E'});
    out.insert(out.end(), {'f', 'm', 't', ' '});
    put_u32(out, 16);
    put_u16(out, tag);
    put_u16(out, static_cast<uint16_t>(buffer.channels));
    put_u32(out, static_cast<uint32_t>(buffer.sample_rate));
    put_u32(out, static_cast<uint32_t>(buffer.sample_rate) * buffer.channels * (bits / 8));
    put_u16(out, static_cast<uint16_t>(buffer.channels * (bits / 8)));
    put_u16(out, bits);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    put_u32(out, data_size);

    if (format == WavFormat::pcm16) {
        for (float v : buffer.samples) {
            long q = std::lrintf(std::clamp(v, -1.0f, 1.0f) * 32768.0f);
            q = std::clamp<long>(q, -32768, 32767);
            put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(q)));
        }
    } else {
        for (float v : buffer.samples) {
            uint32_t raw;
            std::memcpy(&raw, &v, 4);
            put_u32(out, raw);
        }
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file)
        raise(errc::io_error, "cannot write WAV file: " + path);
    file.write(reinterpret_cast<const char*>(out.data()),
               static_cast<std::streamsize>(out.size()));
    if (!file)
        raise(errc::io_error, "short write to WAV file: " + path);
}

} // namespace diar
