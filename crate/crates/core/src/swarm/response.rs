use serde::Serialize;
use thiserror::Error;

use crate::domain::Probability;

/// Structured fields extracted from an agent's free-text answer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParsedResponse {
    pub probability: Probability,
    pub confidence: f64,
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{reason}")]
pub struct ResponseParseError {
    pub reason: String,
    pub raw_text: String,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Key {
    Probability,
    Confidence,
    Reasoning,
}

/// Recognizes `KEY:` at the start of a line, tolerating leading markdown
/// emphasis and any letter case.
fn key_line(line: &str) -> Option<(Key, &str)> {
    let t = line.trim_start().trim_start_matches(['*', '-', '#', ' ']);
    let (head, rest) = t.split_once(':')?;
    let key = match head.trim().trim_end_matches('*').to_ascii_uppercase().as_str() {
        "PROBABILITY" => Key::Probability,
        "CONFIDENCE" => Key::Confidence,
        "REASONING" => Key::Reasoning,
        _ => return None,
    };
    Some((key, rest.trim_start_matches('*')))
}

fn parse_number(raw: &str) -> Option<f64> {
    let t = raw.trim().trim_matches(['*', '`']).trim();
    let v: f64 = t.parse().ok()?;
    v.is_finite().then_some(v)
}

/// Extracts the trailing `PROBABILITY` / `CONFIDENCE` / `REASONING` block.
///
/// The block starts at the last `PROBABILITY:` line, so chain-of-thought text
/// before it may mention the keys freely. `REASONING` runs to the next key
/// line or the end of the text, minus a closing code fence. Values are never
/// clamped: a probability outside `[0, 1]` or a confidence outside `(0, 1]` is
/// an error.
pub fn parse_agent_response(raw_text: &str) -> Result<ParsedResponse, ResponseParseError> {
    let fail = |reason: &str| ResponseParseError {
        reason: reason.to_owned(),
        raw_text: raw_text.to_owned(),
    };
    let lines: Vec<&str> = raw_text.lines().collect();
    let start = lines
        .iter()
        .rposition(|l| matches!(key_line(l), Some((Key::Probability, _))))
        .ok_or_else(|| fail("missing PROBABILITY line"))?;

    let mut probability = None;
    let mut confidence = None;
    let mut reasoning: Option<Vec<&str>> = None;
    let mut in_reasoning = false;
    for line in &lines[start..] {
        if let Some((key, value)) = key_line(line) {
            in_reasoning = false;
            match key {
                Key::Probability => probability = Some(value),
                Key::Confidence => confidence = Some(value),
                Key::Reasoning => {
                    reasoning = Some(vec![value.trim_start()]);
                    in_reasoning = true;
                }
            }
        } else if in_reasoning {
            if let Some(r) = reasoning.as_mut() {
                r.push(line);
            }
        }
    }

    let p_raw = probability.ok_or_else(|| fail("missing PROBABILITY"))?;
    let p = parse_number(p_raw).ok_or_else(|| fail("PROBABILITY is not a number"))?;
    let probability =
        Probability::new(p).map_err(|_| fail(&format!("PROBABILITY {p} outside [0, 1]")))?;

    let c_raw = confidence.ok_or_else(|| fail("missing CONFIDENCE"))?;
    let c = parse_number(c_raw).ok_or_else(|| fail("CONFIDENCE is not a number"))?;
    if !(c > 0.0 && c <= 1.0) {
        return Err(fail(&format!("CONFIDENCE {c} outside (0, 1]")));
    }

    let mut body = reasoning.ok_or_else(|| fail("missing REASONING"))?;
    while body.last().is_some_and(|l| {
        let t = l.trim();
        t.is_empty() || t.starts_with("```")
    }) {
        body.pop();
    }
    let reasoning = body.join("\n").trim().to_owned();
    if reasoning.is_empty() {
        return Err(fail("empty REASONING"));
    }

    Ok(ParsedResponse {
        probability,
        confidence: c,
        reasoning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn happy_path() {
        let r = parse_agent_response("Some thoughts.\nPROBABILITY: 0.72\nCONFIDENCE: 0.8\nREASONING: base rates").unwrap();
        assert_eq!(r.probability.value(), 0.72);
        assert_eq!(r.confidence, 0.8);
        assert_eq!(r.reasoning, "base rates");
    }

    #[test]
    fn out_of_range_rejected() {
        let e = parse_agent_response("PROBABILITY: 1.7\nCONFIDENCE: 0.5\nREASONING: x").unwrap_err();
        assert!(e.reason.contains("outside"));
        assert!(e.raw_text.contains("1.7"));
        assert!(parse_agent_response("PROBABILITY: 0.5\nCONFIDENCE: 0\nREASONING: x").is_err());
        assert!(parse_agent_response("PROBABILITY: 0.5\nCONFIDENCE: 1.2\nREASONING: x").is_err());
    }

    #[test]
    fn missing_confidence_is_rejected_not_defaulted() {
        assert!(parse_agent_response("PROBABILITY: 0.5\nREASONING: x").is_err());
    }

    #[test]
    fn multiline_reasoning_captured() {
        let text = "Preamble mentioning PROBABILITY: maybe\n\n```\nPROBABILITY: 0.3\nCONFIDENCE: 0.6\nREASONING: first line\nsecond line\n\n  third line\n```\n";
        let r = parse_agent_response(text).unwrap();
        assert_eq!(r.probability.value(), 0.3);
        assert_eq!(r.reasoning, "first line\nsecond line\n\n  third line");
    }

    #[test]
    fn reasoning_before_probability_ignored_when_block_restarts() {
        // The last PROBABILITY line starts the block, so keys must follow it.
        let text = "REASONING: early\nPROBABILITY: 0.4\nCONFIDENCE: 0.9";
        assert!(parse_agent_response(text).is_err());
    }

    #[test]
    fn markdown_emphasis_tolerated() {
        let r = parse_agent_response("**PROBABILITY:** 0.25\n**Confidence:** 0.5\n**REASONING:** ok").unwrap();
        assert_eq!(r.probability.value(), 0.25);
        assert_eq!(r.reasoning, "ok");
    }

    #[test]
    fn missing_block() {
        assert!(parse_agent_response("I think it's likely.").is_err());
        assert!(parse_agent_response("PROBABILITY: high\nCONFIDENCE: 0.5\nREASONING: x").is_err());
    }
}
