//! Corpus-level BLEU (multi-bleu semantics: clipped modified n-gram
//! precisions, geometric mean, brevity penalty, no smoothing) and PINC,
//! the source-novelty score.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Sentence;

pub const BLEU_MAX_ORDER: usize = 4;
pub const PINC_MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// Score in [0, 100]; 0 whenever any order's precision is 0.
    pub bleu: f64,
    /// Modified precisions p1..p4 in [0, 1].
    pub precisions: [f64; BLEU_MAX_ORDER],
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuReport {
    pub fn ratio(&self) -> f64 {
        if self.reference_len == 0 {
            0.0
        } else {
            self.candidate_len as f64 / self.reference_len as f64
        }
    }

    /// One-line form mirroring the classic script's output.
    pub fn summary_line(&self) -> String {
        format!(
            "BLEU = {:.2}, p1/p2/p3/p4 = {:.1}/{:.1}/{:.1}/{:.1}, BP = {:.3}, ratio = {:.3}",
            self.bleu,
            self.precisions[0] * 100.0,
            self.precisions[1] * 100.0,
            self.precisions[2] * 100.0,
            self.precisions[3] * 100.0,
            self.brevity_penalty,
            self.ratio(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PincReport {
    /// Mean per-pair score, reported on the 0–100 scale.
    pub pinc: f64,
    /// Highest n-gram order considered.
    pub n_max: usize,
    pub pairs: usize,
    /// Pairs whose candidate was empty; each scored 0.
    pub empty_candidates: usize,
}

impl PincReport {
    pub fn summary_line(&self) -> String {
        format!(
            "PINC = {:.2}, N = {}, pairs = {}, empty_candidates = {}",
            self.pinc, self.n_max, self.pairs, self.empty_candidates
        )
    }
}

/// Multiset of n-grams of one order, keyed by token windows.
fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU over aligned single-reference pairs. Per-sentence candidate
/// n-gram counts are clipped by the reference's counts, summed over the
/// corpus for n = 1..4, combined by geometric mean, and scaled by the
/// brevity penalty min(1, e^{1−r/c}). No smoothing: any zero precision
/// (including an order with no candidate n-grams at all) zeroes the score.
pub fn bleu(candidates: &[Sentence], references: &[Sentence]) -> Result<BleuReport> {
    if candidates.len() != references.len() {
        return Err(Error::data(format!(
            "bleu: {} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::data("bleu: empty corpus"));
    }
    let mut correct = [0u64; BLEU_MAX_ORDER];
    let mut total = [0u64; BLEU_MAX_ORDER];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (cand, reference) in candidates.iter().zip(references) {
        cand_len += cand.len();
        ref_len += reference.len();
        for n in 1..=BLEU_MAX_ORDER {
            let cand_counts = ngram_counts(cand.tokens(), n);
            if cand_counts.is_empty() {
                continue;
            }
            let ref_counts = ngram_counts(reference.tokens(), n);
            for (gram, &c) in &cand_counts {
                total[n - 1] += c;
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                correct[n - 1] += c.min(clip);
            }
        }
    }
    let mut precisions = [0.0f64; BLEU_MAX_ORDER];
    let mut all_positive = true;
    for n in 0..BLEU_MAX_ORDER {
        if total[n] > 0 {
            precisions[n] = correct[n] as f64 / total[n] as f64;
        }
        if precisions[n] <= 0.0 {
            all_positive = false;
        }
    }
    let brevity_penalty = if cand_len == 0 {
        0.0
    } else if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if all_positive {
        let log_mean: f64 = precisions.iter().map(|p| p.ln()).sum::<f64>() / BLEU_MAX_ORDER as f64;
        brevity_penalty * log_mean.exp() * 100.0
    } else {
        0.0
    };
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        candidate_len: cand_len,
        reference_len: ref_len,
    })
}

/// Distinct n-grams of one order.
fn ngram_set(tokens: &[String], n: usize) -> Vec<&[String]> {
    let mut set: Vec<&[String]> = Vec::new();
    if tokens.len() >= n {
        let mut seen: HashMap<&[String], ()> = HashMap::new();
        for w in tokens.windows(n) {
            if seen.insert(w, ()).is_none() {
                set.push(w);
            }
        }
    }
    set
}

/// PINC: per pair, one minus the mean over n-gram orders of the fraction
/// of the candidate's DISTINCT n-grams also present in the source. Orders
/// where the candidate has no n-grams are skipped (the mean divides by the
/// orders actually available); empty candidates score 0 and are counted in
/// the report. Corpus score is the mean over pairs, on the 0–100 scale.
pub fn pinc(sources: &[Sentence], candidates: &[Sentence]) -> Result<PincReport> {
    if sources.len() != candidates.len() {
        return Err(Error::data(format!(
            "pinc: {} sources vs {} candidates",
            sources.len(),
            candidates.len()
        )));
    }
    if sources.is_empty() {
        return Err(Error::data("pinc: empty corpus"));
    }
    let mut sum = 0.0f64;
    let mut empty = 0usize;
    for (src, cand) in sources.iter().zip(candidates) {
        if cand.is_empty() {
            empty += 1;
            continue; // contributes 0
        }
        let mut pair_sum = 0.0f64;
        let mut orders = 0usize;
        for n in 1..=PINC_MAX_ORDER {
            let cand_grams = ngram_set(cand.tokens(), n);
            if cand_grams.is_empty() {
                continue;
            }
            let src_counts = ngram_counts(src.tokens(), n);
            let overlap = cand_grams
                .iter()
                .filter(|g| src_counts.contains_key(*g))
                .count();
            pair_sum += 1.0 - overlap as f64 / cand_grams.len() as f64;
            orders += 1;
        }
        if orders > 0 {
            sum += pair_sum / orders as f64;
        }
    }
    Ok(PincReport {
        pinc: sum / sources.len() as f64 * 100.0,
        n_max: PINC_MAX_ORDER,
        pairs: sources.len(),
        empty_candidates: empty,
    })
}
