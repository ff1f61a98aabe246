#include "ode/providers.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>

#include "ode/error.hpp"

namespace ode {

std::string_view to_string(ProviderMode mode) {
    switch (mode) {
        case ProviderMode::live: return "live";
        case ProviderMode::record: return "record";
        case ProviderMode::replay: return "replay";
    }
    return "replay";
}

ProviderMode provider_mode_from_string(std::string_view text) {
    if (text == "live") return ProviderMode::live;
    if (text == "record") return ProviderMode::record;
    if (text == "replay") return ProviderMode::replay;
    throw Error(ErrorKind::InvalidArgument, "unknown provider mode '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// serialization

namespace {

json hits_to_json(const std::vector<SearchHit>& hits) {
    json arr = json::array();
    for (const auto& h : hits) arr.push_back({{"title", h.title}, {"url", h.url}, {"snippet", h.snippet}});
    return arr;
}

std::vector<SearchHit> hits_from_json(const json& arr) {
    std::vector<SearchHit> out;
    for (const auto& h : arr) {
        out.push_back({h.value("title", ""), h.value("url", ""), h.value("snippet", "")});
    }
    return out;
}

}  // namespace

json canonical_text_request(std::string_view kind, const std::string& query) {
    return {{"tool", kind}, {"query", query}};
}

json canonical_image_request(std::string_view kind, const ImageQueryInput& input) {
    json req = {{"tool", kind}};
    if (input.image) {
        req["image_digest"] = sha256_hex(*input.image);
    } else {
        req["query"] = input.query;
    }
    return req;
}

json canonical_visit_request(const std::string& url) { return {{"tool", "visit"}, {"url", url}}; }

// ---------------------------------------------------------------------------
// FixtureStore

FixtureStore::FixtureStore(std::filesystem::path root) : root_(std::move(root)) {}

std::string FixtureStore::request_digest(const json& request) { return sha256_hex(request.dump()); }

std::filesystem::path FixtureStore::path_for(std::string_view tool, const json& request) const {
    return root_ / std::string(tool) / (request_digest(request) + ".json");
}

std::optional<json> FixtureStore::load(std::string_view tool, const json& request) const {
    auto path = path_for(tool, request);
    if (!std::filesystem::exists(path)) return std::nullopt;
    json doc = json::parse(read_file_text(path), nullptr, false);
    if (doc.is_discarded() || !doc.contains("response")) {
        throw Error(ErrorKind::ProviderUnavailable, "corrupt fixture " + path.string());
    }
    return doc["response"];
}

void FixtureStore::save(std::string_view tool, const json& request, const json& response) const {
    json doc = {{"request", request}, {"response", response}};
    write_file_atomic(path_for(tool, request), doc.dump(2) + "\n");
}

std::string FixtureStore::save_image(const Bytes& payload) const {
    auto digest = sha256_hex(payload);
    auto path = root_ / "images" / digest;
    if (!std::filesystem::exists(path)) write_file_atomic(path, payload);
    return digest;
}

Bytes FixtureStore::load_image(const std::string& digest) const {
    auto path = root_ / "images" / digest;
    if (!std::filesystem::exists(path)) throw Error(ErrorKind::ProviderUnavailable, "missing fixture image " + digest);
    return read_file_bytes(path);
}

void FixtureStore::save_text_search(std::string_view kind, const std::string& query,
                                    const TextSearchResponse& resp) const {
    save(kind, canonical_text_request(kind, query), {{"results", hits_to_json(resp.results)}});
}

void FixtureStore::save_image_query(std::string_view kind, const ImageQueryInput& input,
                                    const ImageQueryResponse& resp) const {
    json images = json::array();
    for (const auto& img : resp.images) {
        images.push_back({{"title", img.title},
                          {"source_url", img.source_url},
                          {"mime", img.mime},
                          {"digest", save_image(img.payload)}});
    }
    save(kind, canonical_image_request(kind, input), {{"matches", hits_to_json(resp.matches)}, {"images", images}});
}

void FixtureStore::save_page(const std::string& url, const PageResponse& resp) const {
    save("visit", canonical_visit_request(url), {{"text", resp.text}});
}

void FixtureStore::save_page_failure(const std::string& url, const std::string& message) const {
    save("visit", canonical_visit_request(url), {{"error", "FetchFailed"}, {"message", message}});
}

// ---------------------------------------------------------------------------
// ReplayProvider

namespace {

[[noreturn]] void missing_fixture(std::string_view tool, const json& request) {
    throw Error(ErrorKind::ProviderUnavailable, "no " + std::string(tool) + " fixture for " + request.dump());
}

}  // namespace

TextSearchResponse ReplayProvider::text_search(std::string_view kind, const std::string& query) {
    auto req = canonical_text_request(kind, query);
    auto resp = store_.load(kind, req);
    if (!resp) missing_fixture(kind, req);
    return {hits_from_json(resp->value("results", json::array()))};
}

ImageQueryResponse ReplayProvider::image_query(std::string_view kind, const ImageQueryInput& input) {
    auto req = canonical_image_request(kind, input);
    auto resp = store_.load(kind, req);
    if (!resp) missing_fixture(kind, req);
    ImageQueryResponse out;
    out.matches = hits_from_json(resp->value("matches", json::array()));
    for (const auto& img : resp->value("images", json::array())) {
        out.images.push_back({img.value("title", ""), img.value("source_url", ""), img.value("mime", "image/png"),
                              store_.load_image(img.at("digest").get<std::string>())});
    }
    return out;
}

PageResponse ReplayProvider::fetch(const std::string& url) {
    auto req = canonical_visit_request(url);
    auto resp = store_.load("visit", req);
    if (!resp) missing_fixture("visit", req);
    if (resp->contains("error")) throw Error(ErrorKind::FetchFailed, resp->value("message", url));
    return {resp->value("text", "")};
}

// ---------------------------------------------------------------------------
// RecordingProvider

TextSearchResponse RecordingProvider::text_search(std::string_view kind, const std::string& query) {
    auto resp = live_->text_search(kind, query);
    store_.save_text_search(kind, query, resp);
    return resp;
}

ImageQueryResponse RecordingProvider::image_query(std::string_view kind, const ImageQueryInput& input) {
    auto resp = live_->image_query(kind, input);
    store_.save_image_query(kind, input, resp);
    return resp;
}

PageResponse RecordingProvider::fetch(const std::string& url) {
    try {
        auto resp = live_->fetch(url);
        store_.save_page(url, resp);
        return resp;
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::FetchFailed) store_.save_page_failure(url, e.what());
        throw;
    }
}

// ---------------------------------------------------------------------------
// URL + HTML helpers

std::optional<ParsedUrl> parse_url(std::string_view url) {
    ParsedUrl out;
    auto sep = url.find("://");
    if (sep == std::string_view::npos) return std::nullopt;
    out.scheme = std::string(url.substr(0, sep));
    std::transform(out.scheme.begin(), out.scheme.end(), out.scheme.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (out.scheme != "http" && out.scheme != "https") return std::nullopt;
    auto rest = url.substr(sep + 3);
    auto slash = rest.find_first_of("/?#");
    auto authority = rest.substr(0, slash);
    out.path = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
    if (!out.path.empty() && out.path[0] != '/') out.path = "/" + out.path;
    if (auto at = authority.rfind('@'); at != std::string_view::npos) authority = authority.substr(at + 1);
    out.port = out.scheme == "https" ? 443 : 80;
    if (auto colon = authority.rfind(':'); colon != std::string_view::npos) {
        auto port = authority.substr(colon + 1);
        if (port.empty() || port.size() > 5 ||
            !std::all_of(port.begin(), port.end(), [](unsigned char c) { return std::isdigit(c); })) {
            return std::nullopt;
        }
        out.port = std::stoi(std::string(port));
        authority = authority.substr(0, colon);
    }
    if (authority.empty()) return std::nullopt;
    for (char c : authority) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_')) return std::nullopt;
    }
    out.host = std::string(authority);
    std::transform(out.host.begin(), out.host.end(), out.host.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string html_to_text(std::string_view html) {
    std::string out;
    out.reserve(html.size() / 2);
    auto lower_starts = [&](std::size_t pos, std::string_view word) {
        if (pos + word.size() > html.size()) return false;
        for (std::size_t i = 0; i < word.size(); ++i) {
            if (std::tolower(static_cast<unsigned char>(html[pos + i])) != word[i]) return false;
        }
        return true;
    };
    auto skip_element = [&](std::size_t pos, std::string_view name) {
        std::string close = "</" + std::string(name);
        std::size_t i = pos;
        while (i < html.size() && !lower_starts(i, close)) ++i;
        auto end = html.find('>', i);
        return end == std::string_view::npos ? html.size() : end + 1;
    };
    std::size_t i = 0;
    while (i < html.size()) {
        char c = html[i];
        if (c == '<') {
            bool skipped = false;
            for (std::string_view name : {"script", "style", "head", "noscript"}) {
                if (lower_starts(i + 1, name)) {
                    i = skip_element(i, name);
                    skipped = true;
                    break;
                }
            }
            if (skipped) continue;
            if (lower_starts(i, "<!--")) {
                auto end = html.find("-->", i);
                i = end == std::string_view::npos ? html.size() : end + 3;
                continue;
            }
            auto end = html.find('>', i);
            i = end == std::string_view::npos ? html.size() : end + 1;
            out.push_back(' ');
            continue;
        }
        if (c == '&') {
            static constexpr std::pair<std::string_view, char> kEntities[] = {
                {"&amp;", '&'}, {"&lt;", '<'}, {"&gt;", '>'}, {"&quot;", '"'}, {"&#39;", '\''}, {"&nbsp;", ' '},
            };
            bool matched = false;
            for (auto [ent, ch] : kEntities) {
                if (html.substr(i, ent.size()) == ent) {
                    out.push_back(ch);
                    i += ent.size();
                    matched = true;
                    break;
                }
            }
            if (matched) continue;
        }
        out.push_back(c);
        ++i;
    }
    // collapse whitespace
    std::string collapsed;
    collapsed.reserve(out.size());
    bool space = false;
    for (char c : out) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = true;
        } else {
            if (space && !collapsed.empty()) collapsed.push_back(' ');
            collapsed.push_back(c);
            space = false;
        }
    }
    return collapsed;
}

// ---------------------------------------------------------------------------
// HttpSearchProvider

namespace {

std::string env_or_empty(const char* name) {
    const char* v = std::getenv(name);
    return v ? std::string(v) : std::string();
}

httplib::Result http_get(const ParsedUrl& u, const httplib::Headers& headers = {}) {
    httplib::Client cli(u.scheme + "://" + u.host + ":" + std::to_string(u.port));
    cli.set_follow_location(true);
    cli.set_connection_timeout(10);
    cli.set_read_timeout(20);
    return cli.Get(u.path, headers);
}

json post_json(const std::string& url, const json& body, const httplib::Headers& headers) {
    auto u = parse_url(url);
    if (!u) throw Error(ErrorKind::ProviderUnavailable, "bad endpoint " + url);
    httplib::Client cli(u->scheme + "://" + u->host + ":" + std::to_string(u->port));
    cli.set_connection_timeout(10);
    cli.set_read_timeout(30);
    auto res = cli.Post(u->path, headers, body.dump(), "application/json");
    if (!res || res->status != 200) {
        throw Error(ErrorKind::ProviderUnavailable,
                    "POST " + url + " failed" + (res ? " with status " + std::to_string(res->status) : ""));
    }
    json doc = json::parse(res->body, nullptr, false);
    if (doc.is_discarded()) throw Error(ErrorKind::ProviderUnavailable, "non-JSON reply from " + url);
    return doc;
}

std::optional<ReturnedImage> download_image(const std::string& url, const std::string& title) {
    auto u = parse_url(url);
    if (!u) return std::nullopt;
    auto res = http_get(*u);
    if (!res || res->status != 200 || res->body.empty()) return std::nullopt;
    std::string mime = res->get_header_value("Content-Type");
    if (auto semi = mime.find(';'); semi != std::string::npos) mime.resize(semi);
    if (mime.rfind("image/", 0) != 0) return std::nullopt;
    return ReturnedImage{title, url, mime, Bytes(res->body.begin(), res->body.end())};
}

}  // namespace

HttpSearchProvider::HttpSearchProvider()
    : serper_key_(env_or_empty("ODE_SERPER_API_KEY")),
      visual_url_(env_or_empty("ODE_VISUAL_SEARCH_URL")),
      visual_key_(env_or_empty("ODE_VISUAL_SEARCH_KEY")) {}

TextSearchResponse HttpSearchProvider::text_search(std::string_view kind, const std::string& query) {
    if (serper_key_.empty()) throw Error(ErrorKind::ProviderUnavailable, "ODE_SERPER_API_KEY is not set");
    std::string endpoint = kind == "scholar_search" ? "https://google.serper.dev/scholar"
                                                    : "https://google.serper.dev/search";
    auto doc = post_json(endpoint, {{"q", query}}, {{"X-API-KEY", serper_key_}});
    TextSearchResponse out;
    for (const auto& item : doc.value("organic", json::array())) {
        out.results.push_back({item.value("title", ""), item.value("link", ""), item.value("snippet", "")});
    }
    return out;
}

ImageQueryResponse HttpSearchProvider::image_query(std::string_view kind, const ImageQueryInput& input) {
    ImageQueryResponse out;
    json doc;
    if (kind == "visual_search") {
        if (visual_url_.empty()) throw Error(ErrorKind::ProviderUnavailable, "ODE_VISUAL_SEARCH_URL is not set");
        httplib::Headers headers;
        if (!visual_key_.empty()) headers.emplace("Authorization", "Bearer " + visual_key_);
        doc = post_json(visual_url_, {{"image_base64", base64_encode(*input.image)}, {"mime", input.mime}}, headers);
        for (const auto& m : doc.value("matches", json::array())) {
            out.matches.push_back({m.value("title", ""), m.value("url", ""), m.value("snippet", "")});
        }
    } else {
        if (serper_key_.empty()) throw Error(ErrorKind::ProviderUnavailable, "ODE_SERPER_API_KEY is not set");
        doc = post_json("https://google.serper.dev/images", {{"q", input.query}}, {{"X-API-KEY", serper_key_}});
        for (const auto& m : doc.value("images", json::array())) {
            out.matches.push_back({m.value("title", ""), m.value("link", ""), m.value("source", "")});
        }
    }
    for (const auto& m : doc.value("images", json::array())) {
        std::string url = m.value("imageUrl", m.value("url", ""));
        if (auto img = download_image(url, m.value("title", ""))) out.images.push_back(std::move(*img));
    }
    return out;
}

PageResponse HttpSearchProvider::fetch(const std::string& url) {
    auto u = parse_url(url);
    if (!u) throw Error(ErrorKind::MalformedUrl, url);
    auto res = http_get(*u, {{"User-Agent", "ode-harness/1.0"}});
    if (!res) throw Error(ErrorKind::FetchFailed, "no response from " + url);
    if (res->status != 200) throw Error(ErrorKind::FetchFailed, url + " returned " + std::to_string(res->status));
    return {html_to_text(res->body)};
}

std::shared_ptr<SearchProvider> make_provider(ProviderMode mode, const std::optional<std::filesystem::path>& fixtures) {
    switch (mode) {
        case ProviderMode::live: return std::make_shared<HttpSearchProvider>();
        case ProviderMode::record:
            if (!fixtures) throw Error(ErrorKind::InvalidArgument, "record mode needs a fixture directory");
            return std::make_shared<RecordingProvider>(std::make_shared<HttpSearchProvider>(), FixtureStore(*fixtures));
        case ProviderMode::replay:
            if (!fixtures) throw Error(ErrorKind::InvalidArgument, "replay mode needs a fixture directory");
            return std::make_shared<ReplayProvider>(FixtureStore(*fixtures));
    }
    return nullptr;
}

}  // namespace ode
