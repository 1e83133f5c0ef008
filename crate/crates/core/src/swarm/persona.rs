use std::collections::HashSet;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SwarmError;

pub const POOL_SIZE: usize = 50;
pub const DEFAULT_AGENTS_PER_MARKET: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    MomentumTrader,
    Contrarian,
    MacroEconomist,
    TechnicalAnalyst,
    FundamentalInvestor,
    PoliticalScientist,
    SportsStatistician,
    PublicHealthExpert,
    DomainSpecialist,
    Generalist,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub persona_id: String,
    pub archetype: Archetype,
    pub display_name: String,
    pub prompt_preamble: String,
}

/// The fixed set of personas loaded at startup.
#[derive(Debug, Clone)]
pub struct PersonaPool {
    personas: Vec<Persona>,
}

impl PersonaPool {
    /// Validates ids are unique and the pool has exactly [`POOL_SIZE`] entries.
    pub fn new(personas: Vec<Persona>) -> Result<Self, SwarmError> {
        Self::with_expected_size(personas, POOL_SIZE)
    }

    pub fn with_expected_size(personas: Vec<Persona>, expected: usize) -> Result<Self, SwarmError> {
        if personas.len() != expected {
            return Err(SwarmError::Pool(format!(
                "expected {expected} personas, found {}",
                personas.len()
            )));
        }
        let mut seen = HashSet::new();
        for p in &personas {
            if p.persona_id.is_empty() || p.prompt_preamble.trim().is_empty() {
                return Err(SwarmError::Pool(format!(
                    "persona {:?} has an empty id or preamble",
                    p.persona_id
                )));
            }
            if !seen.insert(p.persona_id.as_str()) {
                return Err(SwarmError::Pool(format!("duplicate persona id {}", p.persona_id)));
            }
        }
        Ok(Self { personas })
    }

    pub fn load(path: &Path) -> Result<Self, SwarmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SwarmError::Pool(format!("cannot read {}: {e}", path.display())))?;
        let personas: Vec<Persona> = serde_json::from_str(&text)
            .map_err(|e| SwarmError::Pool(format!("cannot parse {}: {e}", path.display())))?;
        Self::new(personas)
    }

    pub fn personas(&self) -> &[Persona] {
        &self.personas
    }

    pub fn len(&self) -> usize {
        self.personas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.personas.is_empty()
    }
}

/// Draws `n` distinct personas uniformly without replacement. The same seed
/// always yields the same cohort in the same order.
pub fn sample_personas(pool: &[Persona], n: usize, rng_seed: u64) -> Result<Vec<Persona>, SwarmError> {
    if n == 0 || n > pool.len() {
        return Err(SwarmError::Sample {
            requested: n,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(index::sample(&mut rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}

#[cfg(test)]
pub(crate) fn test_pool(n: usize) -> Vec<Persona> {
    (0..n)
        .map(|i| Persona {
            persona_id: format!("p{i:02}"),
            archetype: Archetype::Generalist,
            display_name: format!("Persona {i}"),
            prompt_preamble: format!("You are analyst number {i}."),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exhaustive_sample_is_whole_pool() {
        let pool = test_pool(50);
        let mut ids: Vec<_> = sample_personas(&pool, 50, 7)
            .unwrap()
            .into_iter()
            .map(|p| p.persona_id)
            .collect();
        ids.sort();
        let mut all: Vec<_> = pool.iter().map(|p| p.persona_id.clone()).collect();
        all.sort();
        assert_eq!(ids, all);
    }

    #[test]
    fn sample_is_deterministic_and_distinct() {
        let pool = test_pool(50);
        let a = sample_personas(&pool, 25, 99).unwrap();
        let b = sample_personas(&pool, 25, 99).unwrap();
        assert_eq!(a, b);
        let ids: HashSet<_> = a.iter().map(|p| &p.persona_id).collect();
        assert_eq!(ids.len(), 25);
    }

    #[test]
    fn oversample_rejected() {
        assert!(matches!(
            sample_personas(&test_pool(50), 51, 1),
            Err(SwarmError::Sample { .. })
        ));
        assert!(sample_personas(&test_pool(50), 0, 1).is_err());
    }

    #[test]
    fn inclusion_frequency_matches_hypergeometric() {
        // 25 of 50 drawn: each persona is included with probability 1/2.
        let pool = test_pool(50);
        let draws = 10_000u64;
        let mut counts = vec![0u32; 50];
        for seed in 0..draws {
            for p in sample_personas(&pool, 25, seed).unwrap() {
                let i: usize = p.persona_id[1..].parse().unwrap();
                counts[i] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.5).abs() <= 0.02, "inclusion frequency {freq}");
        }
    }

    #[test]
    fn pool_validation() {
        assert!(PersonaPool::new(test_pool(50)).is_ok());
        assert!(PersonaPool::new(test_pool(49)).is_err());
        let mut dup = test_pool(50);
        dup[1].persona_id = dup[0].persona_id.clone();
        assert!(PersonaPool::new(dup).is_err());
    }
}
