#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ode/digest.hpp"

namespace ode {

using nlohmann::json;

enum class ProviderMode { live, record, replay };

std::string_view to_string(ProviderMode mode);
ProviderMode provider_mode_from_string(std::string_view text);

struct SearchHit {
    std::string title;
    std::string url;
    std::string snippet;
    friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

struct ReturnedImage {
    std::string title;
    std::string source_url;
    std::string mime;
    Bytes payload;
};

struct TextSearchResponse {
    std::vector<SearchHit> results;
};

struct ImageQueryResponse {
    std::vector<SearchHit> matches;
    std::vector<ReturnedImage> images;  // provider order
};

struct PageResponse {
    std::string text;
};

/// Either a text query (image_search) or image bytes (visual_search).
struct ImageQueryInput {
    std::string query;
    std::string mime;
    std::shared_ptr<const Bytes> image;
};

/// Search and browse backends. Implementations throw Error(ProviderUnavailable)
/// when they cannot serve, Error(FetchFailed) for page-level failures.
class SearchProvider {
public:
    virtual ~SearchProvider() = default;
    virtual TextSearchResponse text_search(std::string_view kind, const std::string& query) = 0;
    virtual ImageQueryResponse image_query(std::string_view kind, const ImageQueryInput& input) = 0;
    virtual PageResponse fetch(const std::string& url) = 0;
};

/// Canonical request objects; the fixture key is the SHA-256 of their dump.
json canonical_text_request(std::string_view kind, const std::string& query);
json canonical_image_request(std::string_view kind, const ImageQueryInput& input);
json canonical_visit_request(const std::string& url);

/// One file per (tool, canonical-request digest): `<root>/<tool>/<digest>.json`.
/// Image payloads referenced by responses live in `<root>/images/<digest>`.
class FixtureStore {
public:
    explicit FixtureStore(std::filesystem::path root);

    static std::string request_digest(const json& request);
    std::filesystem::path path_for(std::string_view tool, const json& request) const;

    std::optional<json> load(std::string_view tool, const json& request) const;
    void save(std::string_view tool, const json& request, const json& response) const;

    std::string save_image(const Bytes& payload) const;
    Bytes load_image(const std::string& digest) const;

    void save_text_search(std::string_view kind, const std::string& query, const TextSearchResponse& resp) const;
    void save_image_query(std::string_view kind, const ImageQueryInput& input, const ImageQueryResponse& resp) const;
    void save_page(const std::string& url, const PageResponse& resp) const;
    /// Records a fetch failure so replay reproduces it.
    void save_page_failure(const std::string& url, const std::string& message) const;

    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path root_;
};

/// Replay: fixtures only; a missing fixture is ProviderUnavailable.
class ReplayProvider : public SearchProvider {
public:
    explicit ReplayProvider(FixtureStore store) : store_(std::move(store)) {}
    TextSearchResponse text_search(std::string_view kind, const std::string& query) override;
    ImageQueryResponse image_query(std::string_view kind, const ImageQueryInput& input) override;
    PageResponse fetch(const std::string& url) override;

private:
    FixtureStore store_;
};

/// Record: forwards to a live provider and persists every response.
class RecordingProvider : public SearchProvider {
public:
    RecordingProvider(std::shared_ptr<SearchProvider> live, FixtureStore store)
        : live_(std::move(live)), store_(std::move(store)) {}
    TextSearchResponse text_search(std::string_view kind, const std::string& query) override;
    ImageQueryResponse image_query(std::string_view kind, const ImageQueryInput& input) override;
    PageResponse fetch(const std::string& url) override;

private:
    std::shared_ptr<SearchProvider> live_;
    FixtureStore store_;
};

/// Live HTTP provider.
///   ODE_SERPER_API_KEY       web/image/scholar search (google.serper.dev)
///   ODE_VISUAL_SEARCH_URL    reverse-image endpoint taking {"image_base64","mime"}
///   ODE_VISUAL_SEARCH_KEY    optional bearer token for that endpoint
class HttpSearchProvider : public SearchProvider {
public:
    HttpSearchProvider();
    TextSearchResponse text_search(std::string_view kind, const std::string& query) override;
    ImageQueryResponse image_query(std::string_view kind, const ImageQueryInput& input) override;
    PageResponse fetch(const std::string& url) override;

private:
    std::string serper_key_;
    std::string visual_url_;
    std::string visual_key_;
};

std::shared_ptr<SearchProvider> make_provider(ProviderMode mode, const std::optional<std::filesystem::path>& fixtures);

struct ParsedUrl {
    std::string scheme;
    std::string host;
    int port = 0;
    std::string path;  // includes query, starts with '/'
};

/// Absolute http(s) URL or nullopt.
std::optional<ParsedUrl> parse_url(std::string_view url);

/// Readable text from HTML: drops script/style/head, strips tags, decodes common entities,
/// collapses whitespace.
std::string html_to_text(std::string_view html);

}  // namespace ode
