#include "ode/image_bank.hpp"

#include <array>
#include <cctype>

#include "ode/error.hpp"

namespace ode {

std::string ImageHandle::render() const { return "<image:" + std::to_string(index) + ">"; }

namespace {

constexpr std::string_view kPrefix = "<image:";
// More digits than any reachable bank; keeps the conversion overflow-free.
constexpr std::size_t kMaxDigits = 9;

// Tries to read one handle at `pos`; returns the handle and the end offset.
std::optional<std::pair<ImageHandle, std::size_t>> match_at(std::string_view text, std::size_t pos) {
    if (text.substr(pos, kPrefix.size()) != kPrefix) return std::nullopt;
    std::size_t i = pos + kPrefix.size();
    std::size_t start = i;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t digits = i - start;
    if (digits == 0 || digits > kMaxDigits) return std::nullopt;
    if (i >= text.size() || text[i] != '>') return std::nullopt;
    if (digits > 1 && text[start] == '0') return std::nullopt;
    std::size_t value = 0;
    for (std::size_t k = start; k < i; ++k) value = value * 10 + static_cast<std::size_t>(text[k] - '0');
    return std::make_pair(ImageHandle{value}, i + 1);
}

}  // namespace

std::vector<ImageHandle> parse_refs(std::string_view text) {
    std::vector<ImageHandle> out;
    std::size_t pos = text.find(kPrefix);
    while (pos != std::string_view::npos) {
        if (auto m = match_at(text, pos)) {
            out.push_back(m->first);
            pos = text.find(kPrefix, m->second);
        } else {
            pos = text.find(kPrefix, pos + 1);
        }
    }
    return out;
}

std::optional<ImageHandle> parse_handle(std::string_view text) {
    auto m = match_at(text, 0);
    if (!m || m->second != text.size()) return std::nullopt;
    return m->first;
}

bool is_supported_mime(std::string_view mime) {
    static constexpr std::array<std::string_view, 7> kMimes = {
        "image/png", "image/jpeg", "image/gif", "image/webp", "image/bmp",
        "image/x-portable-pixmap", "image/x-portable-graymap",
    };
    for (auto m : kMimes) {
        if (m == mime) return true;
    }
    return false;
}

std::shared_ptr<const Bytes> ImageRecord::payload() const {
    if (inline_payload_) return inline_payload_;
    if (spill_path_) return std::make_shared<const Bytes>(read_file_bytes(*spill_path_));
    throw Error(ErrorKind::EmptyPayload, "record " + handle.render() + " has no payload");
}

ImageBank::ImageBank(std::string owner, BankOptions options)
    : owner_(std::move(owner)), options_(std::move(options)) {}

ImageHandle ImageBank::register_image(Bytes payload, std::string mime, ImageOrigin origin, int created_turn) {
    if (payload.empty()) throw Error(ErrorKind::EmptyPayload, "image payload is empty");
    if (!is_supported_mime(mime)) throw Error(ErrorKind::UnsupportedMime, mime);
    if (records_.size() >= options_.capacity) {
        throw Error(ErrorKind::BankCapacityExceeded,
                    "bank '" + owner_ + "' holds " + std::to_string(options_.capacity) + " records");
    }
    if (!origin.is_tool()) {
        created_turn = -1;
    } else if (created_turn < 0) {
        throw Error(ErrorKind::InvalidArgument, "tool-origin images need a turn index");
    }

    ImageRecord rec;
    rec.handle = ImageHandle{records_.size()};
    rec.mime = std::move(mime);
    rec.origin = std::move(origin);
    rec.created_turn = created_turn;
    rec.digest = sha256_hex(payload);
    rec.size = payload.size();
    if (options_.spill_dir && payload.size() > options_.inline_limit) {
        auto path = *options_.spill_dir / rec.digest;
        if (!std::filesystem::exists(path)) write_file_atomic(path, payload);
        rec.spill_path_ = path;
    } else {
        rec.inline_payload_ = std::make_shared<const Bytes>(std::move(payload));
    }
    records_.push_back(std::move(rec));
    return records_.back().handle;
}

const ImageRecord& ImageBank::resolve(ImageHandle handle) const {
    if (handle.index >= records_.size()) {
        throw Error(ErrorKind::UnknownHandle,
                    handle.render() + " not in bank of size " + std::to_string(records_.size()));
    }
    return records_[handle.index];
}

}  // namespace ode
