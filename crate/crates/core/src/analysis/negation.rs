//! Title-based negation pair matching.
//!
//! Titles are lowercased and stripped of punctuation, contractions are split
//! (`doesn't` -> `does not`), auxiliaries are dropped and a trailing plural
//! `s` is removed. Negation cues (`not`, `no`, `won't`, `fails to`, `under`,
//! `below`) and their positive counterparts (`over`, `above`) are pulled out of
//! the token set. Two titles pair up when exactly one of them carries a cue and
//! the remaining token sets have Jaccard similarity at or above the threshold.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::MarketSnapshot;
use crate::par::{self, ExecPolicy};

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.6;

const STOPWORDS: &[&str] = &["will", "does", "do", "did", "is", "are", "was", "be", "the", "a", "an"];
const NEGATION_CUES: &[&str] = &["not", "no", "under", "below"];
const POSITIVE_DIRECTION: &[&str] = &["over", "above"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegationPair {
    /// The side without a negation cue.
    pub market_a: String,
    /// The negated side.
    pub market_b: String,
    pub match_score: f64,
    pub p_sum: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NormalizedTitle {
    pub core: BTreeSet<String>,
    pub cues: usize,
}

fn raw_tokens(title: &str) -> Vec<String> {
    let cleaned: String = title
        .to_lowercase()
        .chars()
        .map(|c| match c {
            '\u{2019}' | '\'' => '\'',
            c if c.is_alphanumeric() => c,
            _ => ' ',
        })
        .collect();
    let mut out = Vec::new();
    for tok in cleaned.split_whitespace() {
        let tok = tok.trim_matches('\'');
        if tok.is_empty() {
            continue;
        }
        match tok {
            "won't" => out.extend(["will".to_string(), "not".to_string()]),
            "can't" => out.extend(["can".to_string(), "not".to_string()]),
            t if t.ends_with("n't") => {
                out.push(t.trim_end_matches("n't").to_string());
                out.push("not".to_string());
            }
            t => out.push(t.replace('\'', "")),
        }
    }
    out
}

fn stem(tok: &str) -> String {
    if tok.len() > 3 && tok.ends_with('s') && !tok.ends_with("ss") {
        tok[..tok.len() - 1].to_string()
    } else {
        tok.to_string()
    }
}

pub(crate) fn normalize_title(title: &str) -> NormalizedTitle {
    let toks = raw_tokens(title);
    let mut core = BTreeSet::new();
    let mut cues = 0;
    let mut i = 0;
    while i < toks.len() {
        let t = toks[i].as_str();
        if (t == "fails" || t == "fail") && toks.get(i + 1).map(String::as_str) == Some("to") {
            cues += 1;
            i += 2;
            continue;
        }
        if NEGATION_CUES.contains(&t) {
            cues += 1;
        } else if !POSITIVE_DIRECTION.contains(&t) && !STOPWORDS.contains(&t) {
            core.insert(stem(t));
        }
        i += 1;
    }
    NormalizedTitle { core, cues }
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Match score for two titles, or `None` when they are not a negation pair.
/// The boolean is true when `a` is the negated side.
pub(crate) fn negation_match(a: &NormalizedTitle, b: &NormalizedTitle, threshold: f64) -> Option<(f64, bool)> {
    if (a.cues > 0) == (b.cues > 0) {
        return None;
    }
    let score = jaccard(&a.core, &b.core);
    (score >= threshold).then_some((score, a.cues > 0))
}

/// Every negation pair among `markets` with match score `>= threshold`.
/// Pairs come out ordered by the position of their first member in the input.
pub fn find_negation_pairs(policy: ExecPolicy, markets: &[MarketSnapshot], threshold: f64) -> Vec<NegationPair> {
    let normalized = par::map_slice(policy, markets, |m| normalize_title(&m.title));
    let rows = par::map_range(policy, markets.len(), |i| {
        let mut row = Vec::new();
        for j in (i + 1)..markets.len() {
            if markets[i].market_id == markets[j].market_id {
                continue;
            }
            if let Some((score, i_negated)) = negation_match(&normalized[i], &normalized[j], threshold) {
                let (pos, neg) = if i_negated { (j, i) } else { (i, j) };
                let p_sum = markets[pos].yes_price.value() + markets[neg].yes_price.value();
                row.push(NegationPair {
                    market_a: markets[pos].market_id.clone(),
                    market_b: markets[neg].market_id.clone(),
                    match_score: score,
                    p_sum,
                    deviation: (p_sum - 1.0).abs(),
                });
            }
        }
        row
    });
    rows.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Category, Probability};

    fn m(id: &str, title: &str, price: f64) -> MarketSnapshot {
        MarketSnapshot {
            market_id: id.into(),
            title: title.into(),
            yes_price: Probability::new(price).unwrap(),
            volume_usdc: 1.0,
            liquidity_usdc: 1.0,
            category: Category::Politics,
            expiry: 0,
            observed_at: 0,
            volume_basis: Default::default(),
        }
    }

    #[test]
    fn planted_pair() {
        let ms = vec![m("a", "X wins", 0.60), m("b", "X does not win", 0.50)];
        let pairs = find_negation_pairs(ExecPolicy::Sequential, &ms, DEFAULT_MATCH_THRESHOLD);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].market_a, "a");
        assert_eq!(pairs[0].market_b, "b");
        assert!((pairs[0].p_sum - 1.10).abs() < 1e-12);
        assert!((pairs[0].deviation - 0.10).abs() < 1e-12);
        assert_eq!(pairs[0].match_score, 1.0);
    }

    #[test]
    fn negated_side_first_in_input() {
        let ms = vec![m("b", "Will Team Blue fail to qualify?", 0.3), m("a", "Will Team Blue qualify?", 0.6)];
        let pairs = find_negation_pairs(ExecPolicy::Sequential, &ms, DEFAULT_MATCH_THRESHOLD);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].market_a, "a");
    }

    #[test]
    fn no_cues_no_pairs() {
        let ms = vec![
            m("a", "Will the senate pass the bill?", 0.5),
            m("b", "Will the house pass the bill?", 0.5),
            m("c", "Will it snow in Paris?", 0.2),
        ];
        assert!(find_negation_pairs(ExecPolicy::Sequential, &ms, DEFAULT_MATCH_THRESHOLD).is_empty());
    }

    #[test]
    fn duplicate_titles_are_not_pairs() {
        let ms = vec![m("a", "X wins", 0.6), m("b", "X wins", 0.6)];
        assert!(find_negation_pairs(ExecPolicy::Sequential, &ms, DEFAULT_MATCH_THRESHOLD).is_empty());
    }

    #[test]
    fn directional_and_contraction_cues() {
        let t = normalize_title("BTC above $100k on Friday?");
        let u = normalize_title("BTC below $100k on Friday?");
        assert_eq!(t.cues, 0);
        assert_eq!(u.cues, 1);
        assert!(negation_match(&t, &u, 0.6).is_some());
        let w = normalize_title("Team Red won't win the final");
        assert_eq!(w.cues, 1);
        assert_eq!(w.core, normalize_title("Team Red wins the final").core);
        // both sides negated: not a pair
        let x = normalize_title("Team Red doesn't win the final");
        assert!(negation_match(&w, &x, 0.6).is_none());
    }

    #[test]
    fn emitted_pairs_reference_inputs_and_are_deterministic() {
        let ms = vec![
            m("a", "Rain in Oslo tomorrow", 0.4),
            m("b", "No rain in Oslo tomorrow", 0.7),
            m("c", "Snow in Oslo tomorrow", 0.1),
        ];
        let p1 = find_negation_pairs(ExecPolicy::Parallel, &ms, DEFAULT_MATCH_THRESHOLD);
        let p2 = find_negation_pairs(ExecPolicy::Sequential, &ms, DEFAULT_MATCH_THRESHOLD);
        assert_eq!(p1, p2);
        for p in &p1 {
            assert!(ms.iter().any(|x| x.market_id == p.market_a));
            assert!(ms.iter().any(|x| x.market_id == p.market_b));
        }
    }
}
