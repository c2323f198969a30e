use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchOutcome {
    #[serde(alias = "a")]
    AWins,
    #[serde(alias = "b")]
    BWins,
    Tie,
}

impl MatchOutcome {
    /// Score of contestant `a`.
    pub fn score_a(self) -> f64 {
        match self {
            MatchOutcome::AWins => 1.0,
            MatchOutcome::BWins => 0.0,
            MatchOutcome::Tie => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub a: String,
    pub b: String,
    pub outcome: MatchOutcome,
    pub order_index: i64,
}

impl MatchRecord {
    pub fn new(
        a: impl Into<String>,
        b: impl Into<String>,
        outcome: MatchOutcome,
        order_index: i64,
    ) -> Self {
        MatchRecord {
            a: a.into(),
            b: b.into(),
            outcome,
            order_index,
        }
    }
}

/// Reads one match per nonblank line.
pub fn parse_matches_jsonl(text: &str) -> Result<Vec<MatchRecord>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Input(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EloParams {
    pub k: f64,
    pub initial: f64,
    pub scale: f64,
    pub base: f64,
}

impl Default for EloParams {
    fn default() -> Self {
        EloParams {
            k: 32.0,
            initial: 1000.0,
            scale: 400.0,
            base: 10.0,
        }
    }
}

impl EloParams {
    fn check(&self) -> Result<(), EvalError> {
        let ok = self.k.is_finite()
            && self.k >= 0.0
            && self.initial.is_finite()
            && self.scale.is_finite()
            && self.scale > 0.0
            && self.base.is_finite()
            && self.base > 1.0;
        if ok {
            Ok(())
        } else {
            Err(EvalError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// Expected score of a player rated `ra` against one rated `rb`.
pub fn expected_score(ra: f64, rb: f64, params: &EloParams) -> f64 {
    1.0 / (1.0 + params.base.powf((rb - ra) / params.scale))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloTable {
    pub ratings: BTreeMap<String, f64>,
    pub matches_played: BTreeMap<String, u64>,
    pub params: EloParams,
    /// Order indices in the order they were applied.
    pub order: Vec<i64>,
}

impl EloTable {
    /// Names by rating, highest first; equal ratings sort by name.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut rows: Vec<(&str, f64)> =
            self.ratings.iter().map(|(n, r)| (n.as_str(), *r)).collect();
        rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        rows
    }

    pub fn total(&self) -> f64 {
        self.ratings.values().sum()
    }
}

/// Ratings after one match between `ra` and `rb`.
pub fn elo_update(ra: f64, rb: f64, outcome: MatchOutcome, params: &EloParams) -> (f64, f64) {
    let delta = params.k * (outcome.score_a() - expected_score(ra, rb, params));
    (ra + delta, rb - delta)
}

/// Applies the matches in ascending `order_index`; every contestant starts
/// at `params.initial`.
pub fn elo_compute(matches: &[MatchRecord], params: EloParams) -> Result<EloTable, EvalError> {
    elo_compute_from(matches, params, &BTreeMap::new())
}

/// Like [`elo_compute`], with explicit starting ratings for some names.
pub fn elo_compute_from(
    matches: &[MatchRecord],
    params: EloParams,
    starting: &BTreeMap<String, f64>,
) -> Result<EloTable, EvalError> {
    params.check()?;
    let mut seen = BTreeSet::new();
    for m in matches {
        if m.a == m.b {
            return Err(EvalError::SelfMatch {
                order_index: m.order_index,
                name: m.a.clone(),
            });
        }
        if !seen.insert(m.order_index) {
            return Err(EvalError::DuplicateOrderIndex(m.order_index));
        }
    }
    let mut ordered: Vec<&MatchRecord> = matches.iter().collect();
    ordered.sort_by_key(|m| m.order_index);
    let mut ratings: BTreeMap<String, f64> = BTreeMap::new();
    let mut played: BTreeMap<String, u64> = BTreeMap::new();
    for m in &ordered {
        let start = |name: &str| starting.get(name).copied().unwrap_or(params.initial);
        let ra = *ratings.entry(m.a.clone()).or_insert_with(|| start(&m.a));
        let rb = *ratings.entry(m.b.clone()).or_insert_with(|| start(&m.b));
        let (na, nb) = elo_update(ra, rb, m.outcome, &params);
        ratings.insert(m.a.clone(), na);
        ratings.insert(m.b.clone(), nb);
        *played.entry(m.a.clone()).or_default() += 1;
        *played.entry(m.b.clone()).or_default() += 1;
    }
    Ok(EloTable {
        ratings,
        matches_played: played,
        params,
        order: ordered.iter().map(|m| m.order_index).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinRate {
    /// Wins plus half the ties.
    pub wins: f64,
    pub total: u64,
}

impl WinRate {
    pub fn rate(&self) -> f64 {
        self.wins / self.total as f64
    }
}

impl fmt::Display for WinRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}% ({})", 100.0 * self.rate(), self.total)
    }
}

/// Each model's record in matches against `reference`. Models that never
/// met the reference are absent.
pub fn win_rate(
    matches: &[MatchRecord],
    reference: &str,
) -> Result<BTreeMap<String, WinRate>, EvalError> {
    if !matches.iter().any(|m| m.a == reference || m.b == reference) {
        return Err(EvalError::UnknownReference(reference.to_owned()));
    }
    let mut out: BTreeMap<String, WinRate> = BTreeMap::new();
    for m in matches {
        let (model, score) = if m.b == reference && m.a != reference {
            (&m.a, m.outcome.score_a())
        } else if m.a == reference && m.b != reference {
            (&m.b, 1.0 - m.outcome.score_a())
        } else {
            continue;
        };
        let entry = out.entry(model.clone()).or_insert(WinRate {
            wins: 0.0,
            total: 0,
        });
        entry.wins += score;
        entry.total += 1;
    }
    Ok(out)
}

/// Model, Elo, match count and win rate against the reference, by rating.
pub fn format_leaderboard(
    table: &EloTable,
    rates: &BTreeMap<String, WinRate>,
    reference: &str,
) -> String {
    let rows: Vec<[String; 4]> = table
        .ranked()
        .into_iter()
        .map(|(name, rating)| {
            let win = if name == reference {
                "---".to_owned()
            } else {
                rates
                    .get(name)
                    .map_or_else(|| "---".to_owned(), ToString::to_string)
            };
            [
                name.to_owned(),
                format!("{rating:.0}"),
                table
                    .matches_played
                    .get(name)
                    .copied()
                    .unwrap_or(0)
                    .to_string(),
                win,
            ]
        })
        .collect();
    let header = ["Model", "Elo", "Matches", "Win(#Ratings)"].map(String::from);
    let mut widths = header.clone().map(|h| h.len());
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    std::iter::once(&header)
        .chain(&rows)
        .map(|r| {
            let cells: Vec<String> = r
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            cells.join("  ").trim_end().to_owned() + "\n"
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use MatchOutcome::*;

    #[test]
    fn symmetric_first_match() {
        let t = elo_compute(
            &[MatchRecord::new("A", "B", AWins, 0)],
            EloParams::default(),
        )
        .unwrap();
        assert_eq!(t.ratings["A"], 1016.0);
        assert_eq!(t.ratings["B"], 984.0);
        assert_eq!(t.matches_played["A"], 1);
    }

    #[test]
    fn tie_between_equals_changes_nothing() {
        let t = elo_compute(&[MatchRecord::new("A", "B", Tie, 0)], EloParams::default()).unwrap();
        assert_eq!(t.ratings["A"], 1000.0);
    }

    #[test]
    fn order_matters_and_is_recorded() {
        let ms = vec![
            MatchRecord::new("A", "B", AWins, 2),
            MatchRecord::new("B", "C", AWins, 0),
            MatchRecord::new("C", "A", AWins, 1),
        ];
        let t1 = elo_compute(&ms, EloParams::default()).unwrap();
        assert_eq!(t1.order, vec![0, 1, 2]);
        let permuted: Vec<MatchRecord> = ms
            .iter()
            .zip([0, 1, 2])
            .map(|(m, i)| MatchRecord {
                order_index: i,
                ..m.clone()
            })
            .collect();
        let t2 = elo_compute(&permuted, EloParams::default()).unwrap();
        assert_ne!(t1.ratings, t2.ratings);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            elo_compute(&[MatchRecord::new("A", "A", Tie, 0)], EloParams::default()),
            Err(EvalError::SelfMatch { .. })
        ));
        let dup = [
            MatchRecord::new("A", "B", Tie, 0),
            MatchRecord::new("A", "C", Tie, 0),
        ];
        assert_eq!(
            elo_compute(&dup, EloParams::default()),
            Err(EvalError::DuplicateOrderIndex(0))
        );
        let bad = EloParams {
            base: 1.0,
            ..EloParams::default()
        };
        assert!(elo_compute(&[], bad).is_err());
    }

    #[test]
    fn win_rates() {
        let mut ms: Vec<MatchRecord> = (0..3)
            .map(|i| MatchRecord::new("m", "human", AWins, i))
            .collect();
        ms.extend((3..10).map(|i| MatchRecord::new("human", "m", AWins, i)));
        ms.push(MatchRecord::new("x", "y", Tie, 10));
        let r = win_rate(&ms, "human").unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r["m"].to_string(), "30.00% (10)");
        assert_eq!(
            win_rate(&ms, "nobody"),
            Err(EvalError::UnknownReference("nobody".into()))
        );
        let t = elo_compute(&ms, EloParams::default()).unwrap();
        let board = format_leaderboard(&t, &r, "human");
        assert!(board.starts_with("Model"));
        assert!(board.lines().nth(1).unwrap().starts_with("human"));
        assert!(board.contains("30.00% (10)"));
    }

    #[test]
    fn jsonl() {
        let text = "{\"a\":\"A\",\"b\":\"B\",\"outcome\":\"a-wins\",\"order_index\":0}\n\n{\"a\":\"A\",\"b\":\"B\",\"outcome\":\"tie\",\"order_index\":1}\n";
        let ms = parse_matches_jsonl(text).unwrap();
        assert_eq!(ms[1].outcome, Tie);
        assert!(parse_matches_jsonl("{").is_err());
    }
}
