#pragma once

// Default prompt templates. The files under templates/ carry the same text
// and are the user-editable form; a unit test keeps the two in sync.

namespace ape::builtin_templates {

inline constexpr const char* kVanilla =
    R"TPL([[instance {pair_id} | mode {mode}]]
You are an impartial judge. Two candidate responses to the same user prompt
are shown below. Decide which response is better overall.

## User prompt
{prompt}

## Response A
{response_a}

## Response B
{response_b}

## Task
Compare the two responses as a careful human reviewer would, weighing
helpfulness, correctness, and how well each response serves the user's
actual request. Then state which response is better.

## Output format
Reply with a single JSON object on one line containing exactly one key,
"verdict", whose value is "A" or "B". Output nothing else.
)TPL";

inline constexpr const char* kDimension =
    R"TPL([[instance {pair_id} | mode {mode} | dimension {dimension_id}]]
You are an impartial judge. Two candidate responses to the same user prompt
are shown below. Decide which response is better.

## User prompt
{prompt}

## Response A
{response_a}

## Response B
{response_b}

## Evaluation dimension: {dimension_name}
Give particular weight to the following rubric when comparing the responses:
{rubric}

## Output format
Reply with a single JSON object on one line containing exactly one key,
"verdict", whose value is "A" or "B". Output nothing else.
)TPL";

inline constexpr const char* kMonolithic =
    R"TPL([[instance {pair_id} | mode {mode}]]
You are an impartial judge. Two candidate responses to the same user prompt
are shown below. Decide which response is better.

## User prompt
{prompt}

## Response A
{response_a}

## Response B
{response_b}

## Evaluation dimensions
Weigh all of the following criteria when comparing the responses:
{dimensions_block}

## Output format
Reply with a single JSON object on one line containing exactly one key,
"verdict", whose value is "A" or "B". Output nothing else.
)TPL";

inline constexpr const char* kConfidence =
    R"TPL([[instance {pair_id} | mode {mode}]]
You are an impartial judge. Two candidate responses to the same user prompt
are shown below. Decide which response is better and state how confident
you are.

## User prompt
{prompt}

## Response A
{response_a}

## Response B
{response_b}

## Output format
Reply with a single JSON object on one line with two keys: "verdict", whose
value is "A" or "B", and "confidence", a number between 0 and 1 expressing
how certain you are. Output nothing else.
)TPL";

inline constexpr const char* kScore =
    R"TPL([[instance {pair_id} | mode score | dimension {dimension_id} | target {response_tag}]]
You are scoring one model response against a specific evaluation rubric.

## User prompt
{prompt}

## Response
{response}

## Evaluation dimension: {dimension_name}
{rubric}

## Task
Score the response on a scale from {scale_min} to {scale_max}, where
{scale_min} means the response completely fails this rubric and {scale_max}
means it satisfies the rubric as well as any response could.

## Output format
Reply with a single JSON object on one line containing exactly one key,
"score", whose value is a number from {scale_min} to {scale_max}. Output
nothing else.
)TPL";

inline constexpr const char* kPropose =
    R"TPL([[case {pair_id} | mode propose | attempt {attempt}]]
An automatic judge compared two responses to a user prompt and preferred the
wrong one. Human annotators prefer response {label}. Diagnose what evaluation
criterion the judge most likely overlooked, and propose one evaluation
dimension that would correct the mistake.

## User prompt
{prompt}

## Response A
{response_a}

## Response B
{response_b}

## Human-preferred response
{label}

## Previously attempted dimensions
{history}

## Task
Propose a single new evaluation dimension: a short name and a concise rubric
describing how the dimension should be applied when comparing responses. It
must target the aspect that makes response {label} the better answer and must
differ from every previously attempted dimension.

## Output format
Reply with a single JSON object on one line with two keys: "name", a short
dimension name, and "rubric", one or two sentences describing how to apply
it. Output nothing else.
)TPL";

}  // namespace ape::builtin_templates
