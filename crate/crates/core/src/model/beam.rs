use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::tensor::kernels::log_softmax;

use super::vocab::EOS;
use super::Result;

/// Incremental decoder interface used by the search routines.
///
/// `start` encodes the source and returns the logits for the first output
/// position; each `step` feeds the previously chosen token and returns the
/// logits for the next position.
pub trait StepDecoder {
    type State: Clone;

    fn start(&self, src: &[u32]) -> Result<(Self::State, Vec<f64>)>;

    fn step(&self, state: &mut Self::State, token: u32) -> Result<Vec<f64>>;

    /// Longest output the decoder can score.
    fn max_output_len(&self) -> usize {
        usize::MAX
    }
}

/// A decoded sequence. `ids` ends with EOS exactly when `finished`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub ids: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
}

/// Score descending, then ids ascending.
fn rank(a: (f64, &[u32]), b: (f64, &[u32])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Lowest id among the maxima.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Step-wise argmax decoding, ties to the lowest id.
pub fn greedy_decode<D: StepDecoder>(dec: &D, src: &[u32], max_len: usize) -> Result<Hypothesis> {
    let max_len = max_len.min(dec.max_output_len());
    let mut ids = Vec::new();
    let mut log_prob = 0.0;
    if max_len == 0 {
        return Ok(Hypothesis { ids, log_prob, finished: false });
    }
    let (mut state, mut logits) = dec.start(src)?;
    loop {
        let lp = log_softmax(&logits);
        let tok = argmax(&lp);
        log_prob += lp[tok];
        ids.push(tok as u32);
        if tok as u32 == EOS {
            return Ok(Hypothesis { ids, log_prob, finished: true });
        }
        if ids.len() >= max_len {
            return Ok(Hypothesis { ids, log_prob, finished: false });
        }
        logits = dec.step(&mut state, tok as u32)?;
    }
}

struct Beam<S> {
    ids: Vec<u32>,
    score: f64,
    state: S,
    log_probs: Vec<f64>,
}

/// Beam search without length normalisation.
///
/// Returns at most `beam_width` distinct sequences sorted by total log-prob
/// (descending, ties by ids ascending). The greedy continuation is never
/// pruned, so the greedy sequence is always in the result and
/// `beam_width == 1` reproduces [`greedy_decode`]. Sequences cut off at
/// `max_len` are returned with `finished == false`.
pub fn beam_decode<D: StepDecoder>(dec: &D, src: &[u32], beam_width: usize, max_len: usize) -> Result<Vec<Hypothesis>> {
    let k = beam_width.max(1);
    let max_len = max_len.min(dec.max_output_len());
    if max_len == 0 {
        return Ok(vec![Hypothesis {
            ids: Vec::new(),
            log_prob: 0.0,
            finished: false,
        }]);
    }
    let (state, logits) = dec.start(src)?;
    let mut alive = vec![Beam {
        ids: Vec::new(),
        score: 0.0,
        state,
        log_probs: log_softmax(&logits),
    }];
    let mut greedy: Option<usize> = Some(0);
    let mut greedy_done: Option<Hypothesis> = None;
    let mut finished: Vec<Hypothesis> = Vec::new();

    for len in 1..=max_len {
        let mut cands: Vec<(f64, usize, u32)> = alive
            .iter()
            .enumerate()
            .flat_map(|(i, b)| b.log_probs.iter().enumerate().map(move |(t, lp)| (b.score + lp, i, t as u32)))
            .collect();
        let order = |x: &(f64, usize, u32), y: &(f64, usize, u32)| {
            y.0.total_cmp(&x.0)
                .then_with(|| alive[x.1].ids.cmp(&alive[y.1].ids))
                .then_with(|| x.2.cmp(&y.2))
        };
        let keep = k.min(cands.len());
        if keep < cands.len() {
            cands.select_nth_unstable_by(keep - 1, order);
            cands.truncate(keep);
        }
        cands.sort_by(order);
        let greedy_pick = greedy.map(|g| {
            let t = argmax(&alive[g].log_probs);
            (alive[g].score + alive[g].log_probs[t], g, t as u32)
        });
        if let Some(gp) = greedy_pick {
            if !cands.iter().any(|c| c.1 == gp.1 && c.2 == gp.2) {
                let last = cands.len() - 1;
                cands[last] = gp;
            }
        }

        let mut next = Vec::with_capacity(cands.len());
        let mut next_greedy = None;
        for (score, i, tok) in cands {
            let mut ids = alive[i].ids.clone();
            ids.push(tok);
            let is_greedy = greedy_pick.is_some_and(|g| g.1 == i && g.2 == tok);
            if tok == EOS {
                let h = Hypothesis {
                    ids,
                    log_prob: score,
                    finished: true,
                };
                if is_greedy {
                    greedy_done = Some(h.clone());
                }
                finished.push(h);
            } else {
                let mut state = alive[i].state.clone();
                let log_probs = if len < max_len {
                    log_softmax(&dec.step(&mut state, tok)?)
                } else {
                    Vec::new()
                };
                if is_greedy {
                    next_greedy = Some(next.len());
                }
                next.push(Beam {
                    ids,
                    score,
                    state,
                    log_probs,
                });
            }
        }
        alive = next;
        greedy = next_greedy;
        if alive.is_empty() {
            break;
        }
        if greedy.is_none() && finished.len() >= k {
            finished.sort_by(|a, b| rank((a.log_prob, &a.ids), (b.log_prob, &b.ids)));
            let kth = finished[k - 1].log_prob;
            let best_alive = alive.iter().map(|b| b.score).fold(f64::NEG_INFINITY, f64::max);
            if best_alive < kth {
                alive.clear();
                break;
            }
        }
    }

    for (i, b) in alive.into_iter().enumerate() {
        let h = Hypothesis {
            ids: b.ids,
            log_prob: b.score,
            finished: false,
        };
        if greedy == Some(i) {
            greedy_done = Some(h.clone());
        }
        finished.push(h);
    }
    finished.sort_by(|a, b| rank((a.log_prob, &a.ids), (b.log_prob, &b.ids)));
    finished.truncate(k);
    if let Some(g) = greedy_done {
        if !finished.iter().any(|h| h.ids == g.ids) {
            let last = finished.len() - 1;
            finished[last] = g;
        }
    }
    Ok(finished)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Logits are a fixed function of the emitted prefix.
    #[derive(Clone)]
    struct Table {
        vocab: usize,
        seed: u64,
        max: usize,
    }

    impl Table {
        fn logits(&self, prefix: &[u32]) -> Vec<f64> {
            let mut h = self.seed ^ 0x9E37_79B9_7F4A_7C15;
            for &p in prefix {
                h = crate::derive_seed(h, &[p as u64]);
            }
            (0..self.vocab)
                .map(|t| {
                    let z = crate::derive_seed(h, &[t as u64]);
                    (z >> 11) as f64 / (1u64 << 53) as f64 * 4.0
                })
                .collect()
        }
    }

    impl StepDecoder for Table {
        type State = Vec<u32>;

        fn start(&self, _src: &[u32]) -> Result<(Vec<u32>, Vec<f64>)> {
            Ok((Vec::new(), self.logits(&[])))
        }

        fn step(&self, state: &mut Vec<u32>, token: u32) -> Result<Vec<f64>> {
            state.push(token);
            Ok(self.logits(state))
        }

        fn max_output_len(&self) -> usize {
            self.max
        }
    }

    /// Every sequence the decoder can emit within `max` tokens, scored.
    fn enumerate(dec: &Table) -> Vec<Hypothesis> {
        let mut out = Vec::new();
        let mut stack = vec![(Vec::<u32>::new(), 0.0)];
        while let Some((prefix, score)) = stack.pop() {
            let lp = log_softmax(&dec.logits(&prefix));
            for (t, l) in lp.iter().enumerate() {
                let mut ids = prefix.clone();
                ids.push(t as u32);
                let s = score + l;
                if t as u32 == EOS {
                    out.push(Hypothesis { ids, log_prob: s, finished: true });
                } else if ids.len() == dec.max {
                    out.push(Hypothesis { ids, log_prob: s, finished: false });
                } else {
                    stack.push((ids, s));
                }
            }
        }
        out.sort_by(|a, b| rank((a.log_prob, &a.ids), (b.log_prob, &b.ids)));
        out
    }

    #[test]
    fn wide_beam_equals_exhaustive_enumeration() {
        for seed in 0..20 {
            let dec = Table { vocab: 4, seed, max: 2 };
            let all = enumerate(&dec);
            // width >= number of live prefixes makes the search exhaustive
            for k in [4, 6, 13] {
                let got = beam_decode(&dec, &[], k, 2).unwrap();
                assert_eq!(got.len(), k.min(all.len()));
                for (g, o) in got.iter().zip(&all) {
                    assert_eq!(g.ids, o.ids, "seed {seed} k {k}");
                    assert!((g.log_prob - o.log_prob).abs() < 1e-12);
                    assert_eq!(g.finished, o.finished);
                }
            }
        }
    }

    #[test]
    fn width_one_is_greedy() {
        for seed in 0..30 {
            let dec = Table { vocab: 5, seed, max: 6 };
            let g = greedy_decode(&dec, &[], 6).unwrap();
            let b = beam_decode(&dec, &[], 1, 6).unwrap();
            assert_eq!(b, vec![g]);
        }
    }

    #[test]
    fn capped_sequences_are_unfinished() {
        // EOS is never the best token, so greedy runs into the cap
        struct NoEos;
        impl StepDecoder for NoEos {
            type State = ();
            fn start(&self, _: &[u32]) -> Result<((), Vec<f64>)> {
                Ok(((), vec![0.0, -5.0, 1.0]))
            }
            fn step(&self, _: &mut (), _: u32) -> Result<Vec<f64>> {
                Ok(vec![0.0, -5.0, 1.0])
            }
        }
        let g = greedy_decode(&NoEos, &[], 3).unwrap();
        assert_eq!(g.ids, vec![2, 2, 2]);
        assert!(!g.finished);
        let b = beam_decode(&NoEos, &[], 2, 3).unwrap();
        assert_eq!(b[0].ids, vec![2, 2, 2]);
        assert!(!b[0].finished);
    }

    proptest! {
        #[test]
        fn beam_invariants(seed in 0u64..10_000, k in 1usize..6, vocab in 2usize..6, max in 1usize..5) {
            let dec = Table { vocab, seed, max };
            let out = beam_decode(&dec, &[], k, max).unwrap();
            prop_assert!(!out.is_empty() && out.len() <= k);
            for w in out.windows(2) {
                prop_assert!(w[0].log_prob >= w[1].log_prob);
                prop_assert!(w[0].ids != w[1].ids);
            }
            let g = greedy_decode(&dec, &[], max).unwrap();
            prop_assert!(out.iter().any(|h| h.ids == g.ids));
            for h in &out {
                prop_assert_eq!(h.finished, h.ids.last() == Some(&EOS));
            }
        }
    }
}
