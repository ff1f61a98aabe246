#include "ode/tools.hpp"

#include <algorithm>
#include <functional>
#include <sstream>

#include "ode/error.hpp"

namespace ode {

std::string_view to_string(ToolName name) {
    switch (name) {
        case ToolName::web_search: return "web_search";
        case ToolName::image_search: return "image_search";
        case ToolName::scholar_search: return "scholar_search";
        case ToolName::visit: return "visit";
        case ToolName::visual_search: return "visual_search";
        case ToolName::zoom_in: return "zoom_in";
        case ToolName::rotation: return "rotation";
        case ToolName::flip: return "flip";
        case ToolName::python_code: return "python_code";
    }
    return "";
}

std::optional<ToolName> normalize_tool_name(std::string_view name) {
    if (name == "web_fetch" || name == "link_reader") return ToolName::visit;
    for (auto t : kAllTools) {
        if (to_string(t) == name) return t;
    }
    return std::nullopt;
}

std::string cap_observation(std::string text, std::size_t cap) {
    if (text.size() <= cap) return text;
    std::size_t cut = cap;
    // back off continuation bytes so a multibyte character is never split
    while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
    text.resize(cut);
    text += kTruncationMarker;
    return text;
}

namespace {

// Provider text must not be mistaken for bank references.
std::string defang_handles(std::string text) {
    std::size_t pos = 0;
    while ((pos = text.find("<image:", pos)) != std::string::npos) {
        text[pos + 6] = ' ';
        pos += 7;
    }
    return text;
}

std::string require_string(const ToolCall& call, std::initializer_list<const char*> keys) {
    for (const char* key : keys) {
        if (call.args.contains(key) && call.args[key].is_string()) return call.args[key].get<std::string>();
    }
    throw Error(ErrorKind::InvalidArgument, call.name + " needs a string '" + *keys.begin() + "' argument");
}

ImageHandle require_handle(const ToolCall& call, const ImageBank& bank, CallSite site) {
    auto text = require_string(call, {"image", "image_ref", "handle"});
    auto handle = parse_handle(text);
    if (!handle) throw Error(ErrorKind::InvalidArgument, "'" + text + "' is not an image handle");
    if (handle->index >= site.visible || !bank.contains(*handle)) {
        throw Error(ErrorKind::UnknownHandle, handle->render() + " is not in the image bank");
    }
    return *handle;
}

ToolResult register_transform(const ToolCall& call, ImageHandle src_handle, ImageBank& bank, CallSite site,
                              const std::function<Raster(const Raster&)>& op, const std::string& what) {
    const auto& src = bank.resolve(src_handle);
    if (!is_decodable_mime(src.mime)) throw Error(ErrorKind::UnsupportedMime, "cannot transform " + src.mime);
    auto payload = src.payload();
    Raster out = op(decode_image(*payload, src.mime));
    auto mime = output_mime_for(src.mime);
    auto handle = bank.register_image(encode_image(out, mime), mime, ImageOrigin::tool(call.name, call.call_id),
                                      site.turn);
    ToolResult r;
    r.call_id = call.call_id;
    r.new_handles = {handle};
    r.text = what + " on " + src_handle.render() + " produced " + handle.render() + " (" + std::to_string(out.width) +
             "x" + std::to_string(out.height) + ").";
    return r;
}

void require_query(const std::string& query) {
    if (query.find_first_not_of(" \t\r\n") == std::string::npos) throw Error(ErrorKind::EmptyQuery, "query is empty");
}

std::string render_hits(const std::vector<SearchHit>& hits, std::size_t limit) {
    std::ostringstream os;
    std::size_t n = std::min(limit, hits.size());
    for (std::size_t i = 0; i < n; ++i) {
        os << i + 1 << ". " << hits[i].title << "\n   " << hits[i].url;
        if (!hits[i].snippet.empty()) os << "\n   " << hits[i].snippet;
        os << "\n";
    }
    return defang_handles(os.str());
}

}  // namespace

ToolResult transform_zoom(const ToolCall& call, ImageHandle handle, CropBox box, ImageBank& bank, CallSite site) {
    return register_transform(call, handle, bank, site, [&](const Raster& r) { return crop(r, box); }, "zoom_in");
}

ToolResult transform_rotate(const ToolCall& call, ImageHandle handle, int degrees, ImageBank& bank, CallSite site) {
    if (degrees != 90 && degrees != 180 && degrees != 270) {
        throw Error(ErrorKind::UnsupportedAngle, std::to_string(degrees) + " is not a quarter turn");
    }
    return register_transform(call, handle, bank, site, [&](const Raster& r) { return rotate(r, degrees); },
                              "rotation(" + std::to_string(degrees) + ")");
}

ToolResult transform_flip(const ToolCall& call, ImageHandle handle, FlipAxis axis, ImageBank& bank, CallSite site) {
    return register_transform(call, handle, bank, site, [&](const Raster& r) { return flip(r, axis); },
                              axis == FlipAxis::horizontal ? "flip(horizontal)" : "flip(vertical)");
}

ToolResult text_search(ToolName kind, const std::string& call_id, const std::string& query, const ToolEnv& env) {
    require_query(query);
    if (!env.provider) throw Error(ErrorKind::ProviderUnavailable, "no search provider configured");
    auto resp = env.provider->text_search(to_string(kind), query);
    ToolResult r;
    r.call_id = call_id;
    if (resp.results.empty()) {
        r.text = std::string(to_string(kind)) + ": no results.";
    } else {
        r.text = std::string(to_string(kind)) + " results:\n" + render_hits(resp.results, env.caps.max_text_results);
    }
    r.text = cap_observation(std::move(r.text), env.caps.observation_cap);
    return r;
}

ToolResult image_query(ToolName kind, const ToolCall& call, const ImageQueryInput& input, ImageBank& bank,
                       const ToolEnv& env, CallSite site) {
    if (!input.image) require_query(input.query);
    if (!env.provider) throw Error(ErrorKind::ProviderUnavailable, "no search provider configured");
    auto resp = env.provider->image_query(to_string(kind), input);
    ToolResult r;
    r.call_id = call.call_id;
    std::string body = resp.matches.empty() ? std::string(to_string(kind)) + ": no matches.\n"
                                            : std::string(to_string(kind)) + " matches:\n" +
                                                  render_hits(resp.matches, env.caps.max_text_results);
    r.text = cap_observation(std::move(body), env.caps.observation_cap);
    std::size_t n = std::min(env.caps.max_images, resp.images.size());
    std::size_t room = bank.options().capacity - std::min(bank.size(), bank.options().capacity);
    std::size_t dropped = n > room ? n - room : 0;
    n -= dropped;
    for (std::size_t i = 0; i < n; ++i) {
        auto& img = resp.images[i];
        if (img.payload.empty() || !is_supported_mime(img.mime)) continue;
        r.new_handles.push_back(bank.register_image(std::move(img.payload), img.mime,
                                                    ImageOrigin::tool(call.name, call.call_id), site.turn));
    }
    if (!r.new_handles.empty()) {
        r.text += "\nReturned images:";
        for (const auto& h : r.new_handles) r.text += " " + h.render();
    }
    if (dropped > 0) r.text += "\n(" + std::to_string(dropped) + " images not registered: image bank is full)";
    return r;
}

ToolResult visit(const std::string& call_id, const std::string& url, const ToolEnv& env) {
    if (!parse_url(url)) throw Error(ErrorKind::MalformedUrl, "'" + url + "' is not an absolute http(s) URL");
    if (!env.provider) throw Error(ErrorKind::ProviderUnavailable, "no browse provider configured");
    auto page = env.provider->fetch(url);
    ToolResult r;
    r.call_id = call_id;
    r.text = cap_observation(defang_handles(std::move(page.text)), env.caps.observation_cap);
    return r;
}

ToolResult run_code(const std::string& call_id, const std::string& source, const ToolEnv& env) {
    if (source.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw Error(ErrorKind::InvalidArgument, "python_code source is empty");
    }
    if (!env.sandbox) throw Error(ErrorKind::SandboxUnavailable, "no sandbox configured");
    ExecRequest req;
    req.id = call_id;
    req.code = source;
    req.timeout_s = env.caps.code_timeout_s;
    auto resp = env.sandbox->execute(req);
    std::string text = resp.stdout_text;
    if (!resp.stderr_text.empty()) {
        if (!text.empty() && text.back() != '\n') text += "\n";
        text += resp.stderr_text;
    }
    if (resp.status == ExecStatus::timeout) {
        throw Error(ErrorKind::Timeout, "code exceeded " + std::to_string(req.timeout_s) + " s");
    }
    ToolResult r;
    r.call_id = call_id;
    r.text = cap_observation(defang_handles(std::move(text)), env.caps.observation_cap);
    if (resp.status == ExecStatus::error) {
        r.status = ToolStatus::error;
        r.error_kind = std::string(to_string(ErrorKind::ExecutionError));
    }
    return r;
}

ToolResult dispatch(const ToolCall& call, ImageBank& bank, const ToolEnv& env, CallSite site) {
    auto name = normalize_tool_name(call.name);
    if (!name) throw Error(ErrorKind::UnknownTool, "'" + call.name + "' is not a harness tool");
    ToolCall canonical = call;
    canonical.name = std::string(to_string(*name));
    try {
        switch (*name) {
            case ToolName::web_search:
            case ToolName::scholar_search:
                return text_search(*name, call.call_id, require_string(canonical, {"query", "q"}), env);
            case ToolName::image_search: {
                ImageQueryInput input;
                input.query = require_string(canonical, {"query", "q"});
                return image_query(*name, canonical, input, bank, env, site);
            }
            case ToolName::visual_search: {
                auto handle = require_handle(canonical, bank, site);
                const auto& rec = bank.resolve(handle);
                ImageQueryInput input;
                input.mime = rec.mime;
                input.image = rec.payload();
                return image_query(*name, canonical, input, bank, env, site);
            }
            case ToolName::visit: return visit(call.call_id, require_string(canonical, {"url"}), env);
            case ToolName::zoom_in: {
                auto handle = require_handle(canonical, bank, site);
                const auto& box = canonical.args.contains("box") ? canonical.args["box"] : canonical.args["region"];
                if (!box.is_array() || box.size() != 4 ||
                    !std::all_of(box.begin(), box.end(), [](const json& v) { return v.is_number(); })) {
                    throw Error(ErrorKind::InvalidArgument, "zoom_in needs box [x0, y0, x1, y1]");
                }
                return transform_zoom(canonical, handle,
                                      {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
                                       box[3].get<double>()},
                                      bank, site);
            }
            case ToolName::rotation: {
                auto handle = require_handle(canonical, bank, site);
                const auto& deg = canonical.args.contains("degrees") ? canonical.args["degrees"]
                                                                     : canonical.args["angle"];
                if (!deg.is_number()) throw Error(ErrorKind::InvalidArgument, "rotation needs numeric 'degrees'");
                double d = deg.get<double>();
                if (d != static_cast<int>(d)) throw Error(ErrorKind::UnsupportedAngle, "non-integral angle");
                return transform_rotate(canonical, handle, static_cast<int>(d), bank, site);
            }
            case ToolName::flip: {
                auto handle = require_handle(canonical, bank, site);
                auto axis = require_string(canonical, {"axis", "direction"});
                if (axis != "horizontal" && axis != "vertical") {
                    throw Error(ErrorKind::InvalidArgument, "flip axis must be horizontal or vertical");
                }
                return transform_flip(canonical, handle, axis == "horizontal" ? FlipAxis::horizontal
                                                                              : FlipAxis::vertical,
                                      bank, site);
            }
            case ToolName::python_code:
                return run_code(call.call_id, require_string(canonical, {"code", "source"}), env);
        }
    } catch (const Error& e) {
        ToolResult r;
        r.call_id = call.call_id;
        r.status = ToolStatus::error;
        r.error_kind = std::string(to_string(e.kind()));
        r.text = cap_observation("error[" + *r.error_kind + "]: " + e.what(), env.caps.observation_cap);
        return r;
    } catch (const std::exception& e) {
        ToolResult r;
        r.call_id = call.call_id;
        r.status = ToolStatus::error;
        r.error_kind = "InternalError";
        r.text = cap_observation(std::string("error[InternalError]: ") + e.what(), env.caps.observation_cap);
        return r;
    }
    throw Error(ErrorKind::UnknownTool, call.name);
}

std::string tool_catalog() {
    return R"(Available tools (arguments are JSON):
- web_search {"query": str}: web results as title/url/snippet.
- scholar_search {"query": str}: scholarly results.
- image_search {"query": str}: images matching text; returned images get new <image:N> handles.
- visual_search {"image": "<image:N>"}: reverse image search; returned images get new handles.
- visit {"url": str}: readable text of a page.
- zoom_in {"image": "<image:N>", "box": [x0, y0, x1, y1]}: crop a fractional region into a new image.
- rotation {"image": "<image:N>", "degrees": 90|180|270}: clockwise quarter turn into a new image.
- flip {"image": "<image:N>", "axis": "horizontal"|"vertical"}: mirror into a new image.
- python_code {"code": str}: run Python, observe stdout then stderr.
Call a tool with a fenced block tagged `tool` holding {"name": ..., "args": {...}}.
Give the final answer in a fenced block tagged `final`.)";
}

}  // namespace ode
