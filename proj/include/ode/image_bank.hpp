#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ode/digest.hpp"

namespace ode {

/// Sequential reference to a banked image; renders as `<image:N>`.
struct ImageHandle {
    std::size_t index = 0;

    std::string render() const;
    friend bool operator==(const ImageHandle&, const ImageHandle&) = default;
    friend auto operator<=>(const ImageHandle&, const ImageHandle&) = default;
};

/// All handles in `text` matching `<image:(0|[1-9][0-9]*)>`, in order, duplicates kept.
/// Near-misses (`<image: 3>`, `<image:03>`) are not references.
std::vector<ImageHandle> parse_refs(std::string_view text);

/// Parses a string that must be exactly one handle.
std::optional<ImageHandle> parse_handle(std::string_view text);

bool is_supported_mime(std::string_view mime);

struct ImageOrigin {
    enum class Kind { initial, tool };
    Kind kind = Kind::initial;
    std::string tool_name;
    std::string call_id;

    static ImageOrigin initial() { return {}; }
    static ImageOrigin tool(std::string name, std::string call_id) {
        return {Kind::tool, std::move(name), std::move(call_id)};
    }
    bool is_tool() const { return kind == Kind::tool; }
    friend bool operator==(const ImageOrigin&, const ImageOrigin&) = default;
};

class ImageRecord {
public:
    ImageHandle handle;
    std::string mime;
    ImageOrigin origin;
    int created_turn = -1;
    std::string digest;
    std::size_t size = 0;

    /// Payload bytes, read back from the spill file when the record was spilled.
    std::shared_ptr<const Bytes> payload() const;
    bool spilled() const { return spill_path_.has_value(); }

private:
    friend class ImageBank;
    std::shared_ptr<const Bytes> inline_payload_;
    std::optional<std::filesystem::path> spill_path_;
};

struct BankOptions {
    std::size_t capacity = 64;
    std::size_t inline_limit = 8u * 1024u * 1024u;
    /// Content-addressed directory for payloads above inline_limit. Unset keeps everything inline.
    std::optional<std::filesystem::path> spill_dir;
};

/// Append-only, per-trajectory image registry.
class ImageBank {
public:
    explicit ImageBank(std::string owner = {}, BankOptions options = {});

    ImageHandle register_image(Bytes payload, std::string mime, ImageOrigin origin, int created_turn = -1);
    const ImageRecord& resolve(ImageHandle handle) const;
    bool contains(ImageHandle handle) const { return handle.index < records_.size(); }

    std::size_t size() const { return records_.size(); }
    const std::vector<ImageRecord>& records() const { return records_; }
    const std::string& owner() const { return owner_; }
    const BankOptions& options() const { return options_; }

private:
    std::string owner_;
    BankOptions options_;
    std::vector<ImageRecord> records_;
};

}  // namespace ode
