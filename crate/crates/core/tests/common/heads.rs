use domlm::heads::{
    openie_forward, openie_scores, qa_predict, HeadConfig, HeadParams, QaWindowScores,
};
use domlm::tensor::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every admissible `(window, start, end)` scored directly; best score wins,
/// ties go to the lexicographically smallest triple.
pub fn exhaustive_span(
    windows: &[QaWindowScores],
    max_len: usize,
) -> Option<(usize, usize, usize, f64)> {
    let mut all = Vec::new();
    for (w, win) in windows.iter().enumerate() {
        let t = win.start.len();
        for i in 0..t {
            for j in i..t {
                let same_segment = win
                    .segments
                    .iter()
                    .any(|r| r.contains(&i) && r.contains(&j));
                if same_segment && j - i <= max_len {
                    all.push((w, i, j, win.start[i] + win.end[j]));
                }
            }
        }
    }
    all.into_iter()
        .reduce(|best, c| if c.3 > best.3 { c } else { best })
}

fn random_window(rng: &mut ChaCha8Rng) -> QaWindowScores {
    let t = rng.gen_range(1..=64);
    // Coarse integer logits force plenty of ties.
    let coarse = rng.gen_bool(0.5);
    let logit = |rng: &mut ChaCha8Rng| {
        if coarse {
            rng.gen_range(-3..=3) as f64
        } else {
            rng.gen_range(-5.0..5.0)
        }
    };
    let start = (0..t).map(|_| logit(rng)).collect();
    let end = (0..t).map(|_| logit(rng)).collect();
    let mut segments = Vec::new();
    let mut at = 0;
    while at < t {
        let len = rng.gen_range(1..=t - at);
        if rng.gen_bool(0.8) {
            segments.push(at..at + len);
        }
        at += len;
    }
    if segments.is_empty() {
        segments.push(0..t);
    }
    QaWindowScores {
        start,
        end,
        segments,
    }
}

/// Number of disagreements between the span decoder and enumeration over
/// `n` random instances.
pub fn qa_oracle_suite(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..n {
        let windows: Vec<QaWindowScores> = (0..rng.gen_range(1..=3))
            .map(|_| random_window(&mut rng))
            .collect();
        let max_len = rng.gen_range(0..=40);
        let got = qa_predict(&windows, max_len)
            .ok()
            .map(|p| (p.window, p.start, p.end, p.score));
        if got != exhaustive_span(&windows, max_len) {
            bad += 1;
        }
    }
    bad
}

/// Largest absolute difference between the pair scorer and a direct
/// recomputation with explicit loops, over `n` random pairs.
pub fn openie_oracle_suite(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let d = rng.gen_range(1..=12);
        let mut hp = HeadParams::<f64>::init(
            &HeadConfig {
                num_attrs: 2,
                seed: k as u64,
                ..Default::default()
            },
            d,
        );
        for t in hp.tensors_mut() {
            *t = Mat::randn(t.rows, t.cols, 1.0, &mut rng);
        }
        let h = Mat::<f64>::randn(4, d, 1.0, &mut rng);
        let (i, j) = (rng.gen_range(0..4), rng.gen_range(0..4));
        let (hi, hj) = (h.row(i), h.row(j));
        let sp: f64 = (0..d).map(|a| hi[a] * hp.pred_w.at(a, 0)).sum::<f64>() + hp.pred_b.at(0, 0);
        let so: f64 = (0..d).map(|a| hj[a] * hp.obj_w.at(a, 0)).sum::<f64>() + hp.obj_b.at(0, 0);
        let mut sm = 0.0;
        for c in 0..d {
            let p: f64 = (0..d).map(|a| hi[a] * hp.pair_wp.at(a, c)).sum();
            let o: f64 = (0..d).map(|a| hj[a] * hp.pair_wo.at(a, c)).sum();
            sm += p * o;
        }
        let s = hp.pair_w.at(0, 0) * sp
            + hp.pair_w.at(1, 0) * so
            + hp.pair_w.at(2, 0) * sm
            + hp.pair_b.at(0, 0);
        let single = openie_forward(hi, hj, &hp);
        let batch = openie_scores(&h, &[(i, j)], &hp).unwrap()[0];
        for got in [single, batch] {
            for (a, b) in [(got.sp, sp), (got.so, so), (got.sm, sm), (got.s, s)] {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}
