#include "ode/judge.hpp"

#include <nlohmann/json.hpp>

#include <array>

#include "ode/error.hpp"

namespace ode {

namespace {

// Verbatim judge prompt. Wrapped source lines are joined back into single lines.
constexpr std::string_view kJudgeTemplate = R"JUDGE(You are a precise final-answer judge.
Your job is to decide whether the candidate final answer matches the correct answer.
Be conservative, but grade like a careful human evaluator rather than a brittle string matcher.
Do not require the candidate to copy the reference wording if it clearly gives the same answer.

[Question]
{question}

[Correct Answer]
{reference_answer}

[Candidate Final Answer]
{candidate_answer}

[Full Model Response For Context]
{full_response}

Task: Determine whether the candidate final answer is correct.

Decision rules:
1. Judge the candidate final answer itself, not the quality or completeness of the explanation.
2. A short answer can still be fully correct. Do NOT require supporting reasoning, derivations, citations, or extra context.
3. If the candidate final answer exactly matches the correct answer after normalizing case, whitespace, simple punctuation, commas, or trailing zeros, you MUST mark it correct.
4. First identify what kind of answer the question asks for: a named concept/entity, a definition, a purpose/function, a mechanism/explanation, a date/date range, a number, an identifier, a location, or a list/set of items.
5. Accept direct semantic equivalence when the candidate gives the same answer in a different surface form.
6. Accept term-definition equivalence if the candidate uniquely names the same concept as the reference definition, or uniquely gives the defining description of the referenced term.
7. Accept a more specific but non-contradictory answer when it still directly answers the question.
8. Accept harmless category or wording variation when it preserves the same core meaning.
9. Accept a correct answer embedded inside a full sentence if the sentence directly answers the question and is not contradicted by other content.
10. For event questions, accept a scene description if it clearly identifies the same event.
11. For cause, reason, or purpose questions, the stated cause must match; a related but different explanation is wrong.
12. For broad class questions, a correct subtype is acceptable.
13. For numbers, dimensions, and formulas, accept mathematically equivalent forms and reasonable decimal approximations when they clearly refer to the same value.
14. For dates or date ranges, every required boundary must match. If the reference is only a year, a full date within that year is acceptable.
15. For named entities, a different entity is wrong even if it is similar, related, or from the same family.
16. Accept standard abbreviated company names and obvious person-name variants when they unambiguously identify the same entity.
17. For open-set questions signaled by wording such as "some examples" or "for example", accept alternate valid examples.
18. For closed-set questions asking for an exact set of items, extra incorrect items or missing required items are wrong.
19. If the candidate gives only a related topic, broad discussion, or background context instead of the answer itself, mark no.
20. If the candidate answer is ambiguous, hedged, contradictory, missing required specificity, or not an answer, mark no.
21. If the candidate says it could not solve the task, refuses to answer, gives no answer, or only shows tool traces or search queries, mark no.
22. If the candidate merely mentions the reference phrase inside a negated statement, failure trace, or quoted query, mark no.

Calibration examples:
- Correct: reference='A set of edges without common vertices.' candidate='matching'
- Correct: reference='Thought experiments.' candidate='used to explore philosophical questions about perception and reality'
- Correct: reference='Saxbys coffee shop' candidate='The Saxbys location at the University of Pennsylvania...'
- Correct: reference='Barcelona vs Inter Milan Champions League match' candidate='The image shows Lamine Yamal celebrating during the Barcelona vs Inter Milan Champions League semi-final.'
- Correct: reference='2025' candidate='April 17, 2025'
- Correct: reference='A snake' candidate='Gary, a blue pit viper'
- Correct: reference='Anker Innovations' candidate='Anker'
- Correct: reference='Clem Delangue' candidate='Clément Delangue'
- Correct: reference='log(2)/log(3)' candidate='0.6309'
- Wrong: reference='April 22 - 29' candidate='April 23 to April 29, 2025'
- Wrong: reference='The HIVE Evo' candidate='The HIVE - Modular Hex Drawers'
- Wrong: reference='precautionary checks after a gruelling bout' candidate='severe dehydration from weight cut'
- Wrong: reference='1500 light-years' candidate='1375 light-years'
- Wrong: reference='the Ocean's trilogy' candidate='Ocean's Eleven'
- Wrong: reference='Ex Machina' candidate='About Time'
- Wrong: reference='Canvas art prints' candidate='giclee prints'
- Wrong: reference='Martha' candidate='None of the characters... Martha'

Return ONLY a single-line JSON object with no markdown fences and no extra text:
{"correct":"yes"|"no","equivalence":"exact"|"format"|"semantic"|"wrong"|"missing"|"ambiguous","reason":"one short sentence"})JUDGE";

constexpr std::array<std::string_view, 4> kSlots = {"{question}", "{reference_answer}", "{candidate_answer}",
                                                    "{full_response}"};

}  // namespace

std::string_view to_string(Equivalence e) {
    switch (e) {
        case Equivalence::exact: return "exact";
        case Equivalence::format: return "format";
        case Equivalence::semantic: return "semantic";
        case Equivalence::wrong: return "wrong";
        case Equivalence::missing: return "missing";
        case Equivalence::ambiguous: return "ambiguous";
    }
    return "missing";
}

std::optional<Equivalence> equivalence_from_string(std::string_view s) {
    for (auto e : {Equivalence::exact, Equivalence::format, Equivalence::semantic, Equivalence::wrong,
                   Equivalence::missing, Equivalence::ambiguous}) {
        if (to_string(e) == s) return e;
    }
    return std::nullopt;
}

std::string extract_final_answer(const Trace& trace) {
    if (trace.stop_reason == StopReason::answered && trace.final_answer) return *trace.final_answer;
    if (trace.turns.empty()) return {};
    const std::string& last = trace.turns.back().assistant_text;
    if (last.size() <= 512) return last;
    std::size_t start = last.size() - 512;
    while (start < last.size() && (static_cast<unsigned char>(last[start]) & 0xC0) == 0x80) ++start;
    return last.substr(start);
}

std::string full_response(const Trace& trace) {
    std::string out;
    for (const auto& t : trace.turns) {
        if (!out.empty()) out += "\n\n";
        out += t.assistant_text;
    }
    return out;
}

std::string_view judge_template() { return kJudgeTemplate; }

std::string render_judge_prompt(std::string_view question, std::string_view reference, std::string_view candidate,
                                std::string_view full_response) {
    const std::array<std::string_view, 4> values = {question, reference, candidate, full_response};
    std::string out;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < kSlots.size(); ++i) {
        auto at = kJudgeTemplate.find(kSlots[i], pos);
        out.append(kJudgeTemplate.substr(pos, at - pos));
        out.append(values[i]);
        pos = at + kSlots[i].size();
    }
    out.append(kJudgeTemplate.substr(pos));
    return out;
}

std::optional<Verdict> parse_verdict_object(std::string_view text) {
    auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object() || j.size() != 3) return std::nullopt;
    for (const char* key : {"correct", "equivalence", "reason"}) {
        if (!j.contains(key) || !j[key].is_string()) return std::nullopt;
    }
    auto correct = j["correct"].get<std::string>();
    auto eq = equivalence_from_string(j["equivalence"].get<std::string>());
    if ((correct != "yes" && correct != "no") || !eq) return std::nullopt;
    bool positive = *eq == Equivalence::exact || *eq == Equivalence::format || *eq == Equivalence::semantic;
    if (positive != (correct == "yes")) return std::nullopt;
    return Verdict{correct == "yes", *eq, j["reason"].get<std::string>()};
}

Verdict parse_verdict(std::string_view response) {
    std::size_t pos = 0;
    while (pos <= response.size()) {
        auto eol = response.find('\n', pos);
        auto line = response.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
        // Try each '{' as a start against the last '}' so prose around the object is ignored.
        auto close = line.rfind('}');
        for (auto open = line.find('{'); open != std::string_view::npos && close != std::string_view::npos &&
                                         open < close;
             open = line.find('{', open + 1)) {
            if (auto v = parse_verdict_object(line.substr(open, close - open + 1))) return *v;
        }
        if (eol == std::string_view::npos) break;
        pos = eol + 1;
    }
    throw Error(ErrorKind::VerdictParseFailure, "no valid verdict line in judge output");
}

Verdict adjudicate(std::string_view question, std::string_view reference, std::string_view candidate,
                   std::string_view full_response, ChatBackend& backend, const DecodeParams& decode) {
    ChatRequest req;
    req.decode = decode;
    req.messages.push_back({ChatRole::user, render_judge_prompt(question, reference, candidate, full_response), {}});
    BudgetState budget;
    budget.limits.per_turn_tokens = decode.max_turn_tokens;
    auto resp = complete(req, budget, backend);
    return parse_verdict(resp.text);
}

}  // namespace ode
