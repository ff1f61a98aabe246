#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "ode/llm_gateway.hpp"
#include "ode/rollout.hpp"

namespace ode {

enum class Equivalence { exact, format, semantic, wrong, missing, ambiguous };
std::string_view to_string(Equivalence e);
std::optional<Equivalence> equivalence_from_string(std::string_view s);

struct Verdict {
    bool correct = false;
    Equivalence equivalence = Equivalence::missing;
    std::string reason;
};

/// The final answer when the trace answered, otherwise the last 512 bytes of the
/// last assistant message (cut on a UTF-8 boundary), or "" for an empty trace.
std::string extract_final_answer(const Trace& trace);

/// Every assistant message of the trace, separated by blank lines.
std::string full_response(const Trace& trace);

/// The judge template with its four slots ({question}, {reference_answer},
/// {candidate_answer}, {full_response}) unfilled.
std::string_view judge_template();

/// Fills each slot once, left to right; slot text inside the arguments is never re-expanded.
std::string render_judge_prompt(std::string_view question, std::string_view reference, std::string_view candidate,
                                std::string_view full_response);

/// Strict parse of one verdict object: exactly the keys correct/equivalence/reason,
/// known values, and correct=yes iff equivalence is exact, format, or semantic.
std::optional<Verdict> parse_verdict_object(std::string_view text);

/// First line holding a valid verdict object, prose around it ignored. Throws VerdictParseFailure.
Verdict parse_verdict(std::string_view response);

/// One completion, no retries. Throws VerdictParseFailure or BackendFailure.
Verdict adjudicate(std::string_view question, std::string_view reference, std::string_view candidate,
                   std::string_view full_response, ChatBackend& backend, const DecodeParams& decode = {});

}  // namespace ode
