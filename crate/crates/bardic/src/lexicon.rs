//! The Original↔Modern word-pair dictionary: loading with second-person
//! augmentation, the dictionary-replacement translator, and embedding
//! retrofitting toward lexicon-linked pairs.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::text::{normalize_chars, Sentence};

/// Word pairs `(original, modern)`, both lowercased single tokens, no
/// duplicate pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    pub pairs: Vec<(String, String)>,
}

// Second-person forms appended on load when absent: the old pronouns map
// onto their closest modern equivalents.
const AUGMENT: [(&str, &str); 5] = [
    ("thou", "you"),
    ("thee", "you"),
    ("thy", "your"),
    ("thine", "yours"),
    ("thyself", "yourself"),
];

/// A loaded lexicon plus load accounting: entry counts before and after
/// augmentation, and how many file entries were discarded.
#[derive(Debug, Clone)]
pub struct LexiconLoad {
    pub lexicon: Lexicon,
    /// Distinct single-word pairs read from the file.
    pub file_pairs: usize,
    /// Augmentation pairs appended because the file lacked them.
    pub augmented_added: usize,
    /// File entries dropped for not being single words.
    pub dropped_entries: usize,
}

fn clean_field(raw: &str) -> Option<String> {
    let tok = normalize_chars(raw).trim().to_lowercase();
    if tok.is_empty() || tok.chars().any(char::is_whitespace) {
        None
    } else {
        Some(tok)
    }
}

/// Load a `original<TAB>modern` TSV. Lines starting with `#` and blank
/// lines are ignored; any other line must have exactly two fields.
/// Multi-word and empty-sided entries are dropped with a warning, exact
/// duplicate pairs are collapsed, and the five second-person pairs are
/// appended if absent.
pub fn load_lexicon(path: &Path) -> Result<LexiconLoad> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut dropped = 0usize;
    for (idx, line) in body.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Malformed {
                what: format!("lexicon {}", path.display()),
                line: line_no,
                detail: format!("expected 2 tab-separated fields, found {}", fields.len()),
            });
        }
        let (orig, modern) = match (clean_field(fields[0]), clean_field(fields[1])) {
            (Some(o), Some(m)) => (o, m),
            _ => {
                log::warn!(
                    "{} line {line_no}: dropping entry that is not a single-word pair: {line:?}",
                    path.display()
                );
                dropped += 1;
                continue;
            }
        };
        if seen.insert((orig.clone(), modern.clone())) {
            pairs.push((orig, modern));
        }
    }
    let file_pairs = pairs.len();
    let mut augmented = 0usize;
    for (orig, modern) in AUGMENT {
        if seen.insert((orig.to_string(), modern.to_string())) {
            pairs.push((orig.to_string(), modern.to_string()));
            augmented += 1;
        }
    }
    Ok(LexiconLoad {
        lexicon: Lexicon { pairs },
        file_pairs,
        augmented_added: augmented,
        dropped_entries: dropped,
    })
}

/// Inverse (modern → original) replacement table. When several original
/// words share one modern word, the winner is the one seen most often on
/// the training Original side; ties go to the lexicographically smallest.
#[derive(Debug, Clone)]
pub struct InverseDictionary {
    map: HashMap<String, String>,
}

impl InverseDictionary {
    pub fn build(lexicon: &Lexicon, target_freq: &HashMap<String, u64>) -> Self {
        let mut map: HashMap<String, String> = HashMap::new();
        for (orig, modern) in &lexicon.pairs {
            match map.get(modern) {
                None => {
                    map.insert(modern.clone(), orig.clone());
                }
                Some(best) => {
                    let f_new = target_freq.get(orig).copied().unwrap_or(0);
                    let f_best = target_freq.get(best).copied().unwrap_or(0);
                    if f_new > f_best || (f_new == f_best && orig < best) {
                        map.insert(modern.clone(), orig.clone());
                    }
                }
            }
        }
        InverseDictionary { map }
    }

    /// Replace every token with a lexicon hit; unmatched tokens pass
    /// through. Output length always equals input length.
    pub fn translate(&self, sentence: &Sentence) -> Sentence {
        Sentence(
            sentence
                .tokens()
                .iter()
                .map(|t| self.map.get(t).unwrap_or(t).clone())
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// One-shot single-sentence form of [`InverseDictionary::translate`].
pub fn dictionary_translate(
    sentence: &Sentence,
    lexicon: &Lexicon,
    target_freq: &HashMap<String, u64>,
) -> Sentence {
    InverseDictionary::build(lexicon, target_freq).translate(sentence)
}

/// Per-pair weight rule for retrofitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OmegaScheme {
    /// ω_ij = 1 / degree(i): each word spreads unit attraction over its
    /// neighbors (the published default).
    InverseDegree,
    /// ω_ij = w for every edge; symmetric, so the objective decreases
    /// monotonically under the synchronous update.
    Constant(f64),
}

/// Quadratic embedding-adjustment problem: keep rows of `Q` near the
/// pretrained `P` (weight `delta`) while pulling constraint-linked rows
/// together (weights from `omega`).
#[derive(Debug, Clone)]
pub struct RetrofitProblem {
    pub p: Mat,
    /// Vocab-id pairs; symmetrized internally, so (i,j) and (j,i) are the
    /// same constraint.
    pub constraints: Vec<(usize, usize)>,
    pub delta: f64,
    pub omega: OmegaScheme,
    pub iterations: usize,
}

impl RetrofitProblem {
    pub fn with_defaults(p: Mat, constraints: Vec<(usize, usize)>) -> Self {
        RetrofitProblem {
            p,
            constraints,
            delta: 1.0,
            omega: OmegaScheme::InverseDegree,
            iterations: 10,
        }
    }

    /// Sorted, deduplicated neighbor lists over the symmetrized constraint
    /// graph; self-loops are discarded.
    fn adjacency(&self) -> Result<Vec<Vec<usize>>> {
        let n = self.p.rows();
        let mut nbrs: Vec<HashSet<usize>> = vec![HashSet::new(); n];
        for &(i, j) in &self.constraints {
            if i >= n || j >= n {
                return Err(Error::data(format!(
                    "constraint ({i}, {j}) out of range for {n} embedding rows"
                )));
            }
            if i == j {
                continue;
            }
            nbrs[i].insert(j);
            nbrs[j].insert(i);
        }
        Ok(nbrs
            .into_iter()
            .map(|s| {
                let mut v: Vec<usize> = s.into_iter().collect();
                v.sort_unstable();
                v
            })
            .collect())
    }

    fn omega_weight(&self, degree_i: usize) -> f64 {
        match self.omega {
            OmegaScheme::InverseDegree => 1.0 / degree_i as f64,
            OmegaScheme::Constant(w) => w,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.delta.is_nan() || self.delta <= 0.0 {
            return Err(Error::data(format!(
                "retrofit delta must be positive, got {}",
                self.delta
            )));
        }
        if let OmegaScheme::Constant(w) = self.omega {
            if w.is_nan() || w <= 0.0 {
                return Err(Error::data(format!(
                    "retrofit constant omega must be positive, got {w}"
                )));
            }
        }
        if !self.p.is_finite() {
            return Err(Error::NonFinite("retrofit input embeddings".into()));
        }
        Ok(())
    }
}

/// Synchronous Jacobi sweeps of the closed-form row update
/// `q_i ← (δ·p_i + Σ_j ω_ij·q_j) / (δ + Σ_j ω_ij)`, starting from `Q = P`.
/// Rows with no constraints come back unchanged.
pub fn retrofit(problem: &RetrofitProblem) -> Result<Mat> {
    problem.validate()?;
    let nbrs = problem.adjacency()?;
    let mut q = problem.p.clone();
    let mut next = q.clone();
    for _ in 0..problem.iterations {
        for (i, nb) in nbrs.iter().enumerate() {
            if nb.is_empty() {
                continue;
            }
            let w = problem.omega_weight(nb.len());
            let denom = problem.delta + w * nb.len() as f64;
            let row_out = next.row_mut(i);
            for (d, r) in row_out.iter_mut().enumerate() {
                *r = problem.delta * problem.p.get(i, d);
            }
            for &j in nb {
                for (d, r) in row_out.iter_mut().enumerate() {
                    *r += w * q.get(j, d);
                }
            }
            for v in row_out.iter_mut() {
                *v /= denom;
            }
        }
        std::mem::swap(&mut q, &mut next);
    }
    Ok(q)
}

/// The quadratic the update is a Jacobi sweep for:
/// `δ Σ_i ‖p_i − q_i‖² + Σ_{{i,j}∈C} ω_ij ‖q_i − q_j‖²`, each unordered
/// constraint counted once. With a symmetric scheme (`Constant`) the sweep
/// provably never increases this; with `InverseDegree` the per-edge weight
/// here is the mean of the two directed weights and the decrease is
/// empirical, not guaranteed.
pub fn retrofit_objective(problem: &RetrofitProblem, q: &Mat) -> Result<f64> {
    let nbrs = problem.adjacency()?;
    let mut f = 0.0;
    for i in 0..problem.p.rows() {
        for d in 0..problem.p.cols() {
            let diff = problem.p.get(i, d) - q.get(i, d);
            f += problem.delta * diff * diff;
        }
        for &j in &nbrs[i] {
            if j < i {
                continue; // count each unordered edge once
            }
            let w =
                0.5 * (problem.omega_weight(nbrs[i].len()) + problem.omega_weight(nbrs[j].len()));
            for d in 0..problem.p.cols() {
                let diff = q.get(i, d) - q.get(j, d);
                f += w * diff * diff;
            }
        }
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DetRng;
    use std::io::Write;

    fn write_lexicon(lines: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lex.tsv");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(lines.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn load_basic_plus_augmentation() {
        let (_d, path) = write_lexicon("commend\trecommend\n");
        let load = load_lexicon(&path).unwrap();
        assert_eq!(load.file_pairs, 1);
        assert_eq!(load.augmented_added, 5);
        assert_eq!(load.lexicon.pairs.len(), 6);
        assert!(load
            .lexicon
            .pairs
            .contains(&("thou".to_string(), "you".to_string())));
    }

    #[test]
    fn load_does_not_duplicate_existing_augment_pair() {
        let (_d, path) = write_lexicon("thou\tyou\nart\tare\n");
        let load = load_lexicon(&path).unwrap();
        assert_eq!(load.file_pairs, 2);
        assert_eq!(load.augmented_added, 4);
        let thou_you = load
            .lexicon
            .pairs
            .iter()
            .filter(|(o, m)| o == "thou" && m == "you")
            .count();
        assert_eq!(thou_you, 1);
    }

    #[test]
    fn load_skips_comments_blanks_and_drops_multiword() {
        let (_d, path) = write_lexicon("# header\n\nfare thee well\tgoodbye\nanon\tsoon\n");
        let load = load_lexicon(&path).unwrap();
        assert_eq!(load.dropped_entries, 1);
        assert_eq!(load.file_pairs, 1);
        assert_eq!(
            load.lexicon.pairs[0],
            ("anon".to_string(), "soon".to_string())
        );
    }

    #[test]
    fn load_malformed_line_reports_number() {
        let (_d, path) = write_lexicon("anon\tsoon\nbroken line without tab\n");
        let err = load_lexicon(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "unexpected message: {msg}");
        assert!(msg.contains("found 1"), "unexpected message: {msg}");
    }

    #[test]
    fn load_lowercases_and_dedups() {
        let (_d, path) = write_lexicon("Anon\tSoon\nanon\tsoon\n");
        let load = load_lexicon(&path).unwrap();
        assert_eq!(load.file_pairs, 1);
    }

    fn freq(entries: &[(&str, u64)]) -> HashMap<String, u64> {
        entries.iter().map(|(t, c)| (t.to_string(), *c)).collect()
    }

    #[test]
    fn translate_empty_and_miss() {
        let lex = Lexicon {
            pairs: vec![("thou".into(), "you".into())],
        };
        let tf = freq(&[("thou", 10)]);
        assert_eq!(
            dictionary_translate(&Sentence(vec![]), &lex, &tf),
            Sentence(vec![])
        );
        let s = Sentence::from_words("nothing matches here");
        assert_eq!(dictionary_translate(&s, &lex, &tf), s);
    }

    #[test]
    fn translate_prefers_frequent_original_then_lexicographic() {
        let lex = Lexicon {
            pairs: vec![("thee".into(), "you".into()), ("thou".into(), "you".into())],
        };
        let s = Sentence::from_words("you are here");
        let tf = freq(&[("thou", 500), ("thee", 300)]);
        assert_eq!(
            dictionary_translate(&s, &lex, &tf),
            Sentence::from_words("thou are here")
        );
        // Equal counts: lexicographically smaller original wins.
        let tf = freq(&[("thou", 300), ("thee", 300)]);
        assert_eq!(
            dictionary_translate(&s, &lex, &tf),
            Sentence::from_words("thee are here")
        );
    }

    #[test]
    fn translate_tie_break_is_insertion_order_independent() {
        let fwd = Lexicon {
            pairs: vec![("thee".into(), "you".into()), ("thou".into(), "you".into())],
        };
        let rev = Lexicon {
            pairs: fwd.pairs.iter().rev().cloned().collect(),
        };
        let tf = freq(&[("thou", 7), ("thee", 7)]);
        let s = Sentence::from_words("you");
        assert_eq!(
            dictionary_translate(&s, &fwd, &tf),
            dictionary_translate(&s, &rev, &tf)
        );
    }

    proptest::proptest! {
        #[test]
        fn translate_preserves_length(words in proptest::collection::vec("[a-f]{1,3}", 0..10)) {
            let lex = Lexicon {
                pairs: vec![("x".into(), "aa".into()), ("y".into(), "b".into())],
            };
            let tf = HashMap::new();
            let s = Sentence(words);
            let out = dictionary_translate(&s, &lex, &tf);
            proptest::prop_assert_eq!(out.len(), s.len());
        }
    }

    #[test]
    fn retrofit_no_constraints_is_identity() {
        let p = Mat::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        let prob = RetrofitProblem::with_defaults(p.clone(), vec![]);
        let q = retrofit(&prob).unwrap();
        assert_eq!(q.as_slice(), p.as_slice());
    }

    #[test]
    fn retrofit_zero_iterations_is_identity() {
        let p = Mat::from_fn(2, 1, |i, _| i as f64);
        let mut prob = RetrofitProblem::with_defaults(p.clone(), vec![(0, 1)]);
        prob.iterations = 0;
        let q = retrofit(&prob).unwrap();
        assert_eq!(q.as_slice(), p.as_slice());
    }

    #[test]
    fn retrofit_one_dimensional_pair_oracle() {
        // Two scalar words at 0 and 1, one constraint, δ=ω=1. Stationary
        // point solves [2 −1; −1 2]·q = [0; 1], i.e. q = (1/3, 2/3).
        let p = Mat::from_vec(2, 1, vec![0.0, 1.0]);
        let mut prob = RetrofitProblem::with_defaults(p, vec![(0, 1)]);
        prob.omega = OmegaScheme::Constant(1.0);
        prob.iterations = 50;
        let q = retrofit(&prob).unwrap();
        assert!(
            (q.get(0, 0) - 1.0 / 3.0).abs() < 1e-6,
            "q_a = {}",
            q.get(0, 0)
        );
        assert!(
            (q.get(1, 0) - 2.0 / 3.0).abs() < 1e-6,
            "q_b = {}",
            q.get(1, 0)
        );
    }

    #[test]
    fn retrofit_symmetric_in_constraint_direction() {
        let p = Mat::from_fn(4, 3, |i, j| ((i + 1) * (j + 2)) as f64 * 0.1);
        let a = RetrofitProblem::with_defaults(p.clone(), vec![(0, 2), (1, 3)]);
        let b = RetrofitProblem::with_defaults(p, vec![(2, 0), (3, 1), (0, 2)]);
        let qa = retrofit(&a).unwrap();
        let qb = retrofit(&b).unwrap();
        assert_eq!(qa.as_slice(), qb.as_slice());
    }

    #[test]
    fn retrofit_large_delta_stays_near_p() {
        let p = Mat::from_fn(3, 2, |i, j| (i as f64) - (j as f64) * 0.5);
        for delta in [1e3, 1e6] {
            let mut prob = RetrofitProblem::with_defaults(p.clone(), vec![(0, 1), (1, 2), (0, 2)]);
            prob.delta = delta;
            prob.omega = OmegaScheme::Constant(1.0);
            let q = retrofit(&prob).unwrap();
            let max_dev = q
                .as_slice()
                .iter()
                .zip(p.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            // Each row's pull is bounded by (Σω·span)/δ; span here is ≤ 2.
            assert!(max_dev < 8.0 / delta, "delta {delta}: deviation {max_dev}");
        }
    }

    /// Dense Gaussian elimination on the stationarity system
    /// `(δ + Σ_j ω_ij)·q_i − Σ_j ω_ij·q_j = δ·p_i`, solved independently
    /// per embedding dimension. Independent oracle for the Jacobi loop.
    fn solve_stationary(prob: &RetrofitProblem) -> Mat {
        let nbrs = prob.adjacency().unwrap();
        let n = prob.p.rows();
        let m = prob.p.cols();
        let mut q = prob.p.clone();
        for d in 0..m {
            // Build A x = b over the n rows for this dimension.
            let mut a = vec![vec![0.0f64; n]; n];
            let mut b = vec![0.0f64; n];
            for i in 0..n {
                if nbrs[i].is_empty() {
                    a[i][i] = 1.0;
                    b[i] = prob.p.get(i, d);
                    continue;
                }
                let w = prob.omega_weight(nbrs[i].len());
                a[i][i] = prob.delta + w * nbrs[i].len() as f64;
                for &j in &nbrs[i] {
                    a[i][j] -= w;
                }
                b[i] = prob.delta * prob.p.get(i, d);
            }
            // Partial-pivot elimination.
            for col in 0..n {
                let mut piv = col;
                for r in col + 1..n {
                    if a[r][col].abs() > a[piv][col].abs() {
                        piv = r;
                    }
                }
                a.swap(col, piv);
                b.swap(col, piv);
                for r in col + 1..n {
                    let factor = a[r][col] / a[col][col];
                    for c in col..n {
                        a[r][c] -= factor * a[col][c];
                    }
                    b[r] -= factor * b[col];
                }
            }
            for i in (0..n).rev() {
                let mut v = b[i];
                for c in i + 1..n {
                    v -= a[i][c] * q.get(c, d);
                }
                q.set(i, d, v / a[i][i]);
            }
        }
        q
    }

    #[test]
    fn retrofit_matches_linear_solve_on_random_problems() {
        let mut rng = DetRng::seed_from_u64(7);
        for trial in 0..20 {
            let n = 2 + rng.below(4); // 2..=5 words
            let m = 1 + rng.below(3);
            let p = Mat::from_fn(n, m, |_, _| rng.uniform(-1.0, 1.0));
            let n_con = 1 + rng.below(4); // 1..=4 constraints
            let mut constraints = Vec::new();
            for _ in 0..n_con {
                let i = rng.below(n);
                let j = rng.below(n);
                if i != j {
                    constraints.push((i, j));
                }
            }
            let mut prob = RetrofitProblem::with_defaults(p, constraints);
            prob.iterations = 50;
            if trial % 2 == 0 {
                prob.omega = OmegaScheme::Constant(0.7);
            }
            let q = retrofit(&prob).unwrap();
            let exact = solve_stationary(&prob);
            let mut linf = 0.0f64;
            for (a, b) in q.as_slice().iter().zip(exact.as_slice()) {
                linf = linf.max((a - b).abs());
            }
            assert!(linf < 1e-6, "trial {trial}: L∞ = {linf}");
        }
    }

    #[test]
    fn retrofit_objective_nonincreasing_constant_omega() {
        let mut rng = DetRng::seed_from_u64(11);
        let p = Mat::from_fn(5, 2, |_, _| rng.uniform(-2.0, 2.0));
        let mut prob = RetrofitProblem::with_defaults(p, vec![(0, 1), (1, 2), (3, 4), (0, 4)]);
        prob.omega = OmegaScheme::Constant(1.3);
        let mut prev = retrofit_objective(&prob, &prob.p).unwrap();
        for iters in 1..=12 {
            prob.iterations = iters;
            let q = retrofit(&prob).unwrap();
            let f = retrofit_objective(&prob, &q).unwrap();
            assert!(
                f <= prev + 1e-12,
                "objective rose at iteration {iters}: {prev} -> {f}"
            );
            prev = f;
        }
    }

    #[test]
    fn retrofit_final_objective_not_above_initial_inverse_degree() {
        let mut rng = DetRng::seed_from_u64(13);
        let p = Mat::from_fn(6, 3, |_, _| rng.uniform(-1.0, 1.0));
        let prob = RetrofitProblem::with_defaults(p, vec![(0, 1), (0, 2), (0, 3), (4, 5)]);
        let q = retrofit(&prob).unwrap();
        let f0 = retrofit_objective(&prob, &prob.p).unwrap();
        let f1 = retrofit_objective(&prob, &q).unwrap();
        assert!(f1 <= f0, "f went {f0} -> {f1}");
    }

    #[test]
    fn retrofit_clique_members_move_toward_mutual_mean() {
        let p = Mat::from_vec(3, 1, vec![0.0, 3.0, 6.0]);
        let prob = RetrofitProblem::with_defaults(p.clone(), vec![(0, 1), (1, 2), (0, 2)]);
        let q = retrofit(&prob).unwrap();
        let mean = 3.0;
        for i in 0..3 {
            let before = (p.get(i, 0) - mean).abs();
            let after = (q.get(i, 0) - mean).abs();
            if before > 0.0 {
                assert!(after < before, "row {i}: {before} -> {after}");
            }
        }
    }

    #[test]
    fn retrofit_rejects_bad_input() {
        let mut p = Mat::zeros(2, 1);
        p.set(0, 0, f64::NAN);
        let prob = RetrofitProblem::with_defaults(p, vec![(0, 1)]);
        assert!(retrofit(&prob).is_err());

        let p = Mat::zeros(2, 1);
        let prob = RetrofitProblem::with_defaults(p, vec![(0, 5)]);
        let err = retrofit(&prob).unwrap_err();
        assert!(err.to_string().contains("out of range"));
    }
}
