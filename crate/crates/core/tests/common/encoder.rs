use domlm::encoder::{encode, encode_with_cache, grad_check, EncoderConfig, EncoderInput, Params};
use domlm::linearizer::{PosRow, NUM_POSITIONS};
use domlm::tensor::Mat;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub tokens: Vec<u32>,
    pub pos: Vec<PosRow>,
}

impl Instance {
    pub fn input(&self) -> EncoderInput<'_> {
        EncoderInput::new(&self.tokens, &self.pos)
    }
}

pub fn random_instance(cfg: &EncoderConfig, t: usize, rng: &mut impl Rng) -> Instance {
    let tokens = (0..t)
        .map(|_| rng.gen_range(0..cfg.vocab_size as u32))
        .collect();
    let pos = (0..t)
        .map(|_| {
            let mut row = [0u32; NUM_POSITIONS];
            for (k, v) in row.iter_mut().enumerate() {
                *v = rng.gen_range(0..cfg.pos_sizes[k] as u32);
            }
            row
        })
        .collect();
    Instance { tokens, pos }
}

/// Parameters with every entry perturbed so that no gradient is tiny by
/// construction (fresh weights are near zero and gains exactly one).
pub fn noisy_params(cfg: &EncoderConfig, std: f64, seed: u64) -> Params<f64> {
    let mut p = Params::<f64>::init(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (i, t) in p.tensors_mut().into_iter().enumerate() {
        if (1..=NUM_POSITIONS).contains(&i) && !cfg.use_structure {
            continue;
        }
        let noise = Mat::randn(t.rows, t.cols, std, &mut rng);
        t.add_assign(&noise);
    }
    p
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(j, v)| (v - mean) / (var + eps).sqrt() * g[j] + b[j])
        .collect()
}

fn linear(x: &[f64], w: &Mat<f64>, b: Option<&Mat<f64>>) -> Vec<f64> {
    (0..w.cols)
        .map(|c| {
            (0..w.rows).map(|r| x[r] * w.at(r, c)).sum::<f64>() + b.map_or(0.0, |b| b.at(0, c))
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Straight-line forward pass, one token and one head at a time. Position
/// tables are added only when `use_positions` is set.
pub fn reference_forward(inst: &Instance, p: &Params<f64>, use_positions: bool) -> Vec<Vec<f64>> {
    let cfg = &p.cfg;
    let (d, heads) = (cfg.hidden, cfg.heads);
    let dh = d / heads;
    let mut h: Vec<Vec<f64>> = inst
        .tokens
        .iter()
        .zip(&inst.pos)
        .map(|(&tok, row)| {
            let mut e = p.word.row(tok as usize).to_vec();
            if use_positions {
                for k in 0..NUM_POSITIONS {
                    for (a, b) in e.iter_mut().zip(p.pos[k].row(row[k] as usize)) {
                        *a += b;
                    }
                }
            }
            e
        })
        .collect();
    let t = h.len();
    for lp in &p.layers {
        let q: Vec<Vec<f64>> = h.iter().map(|x| linear(x, &lp.wq, None)).collect();
        let k: Vec<Vec<f64>> = h.iter().map(|x| linear(x, &lp.wk, None)).collect();
        let v: Vec<Vec<f64>> = h.iter().map(|x| linear(x, &lp.wv, None)).collect();
        let mut next = Vec::with_capacity(t);
        for i in 0..t {
            let mut ctx = vec![0.0; d];
            for a in 0..heads {
                let cols = a * dh..(a + 1) * dh;
                let scores: Vec<f64> = (0..t)
                    .map(|j| {
                        cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
                for j in 0..t {
                    let w = (scores[j] - max).exp() / z;
                    for c in cols.clone() {
                        ctx[c] += w * v[j][c];
                    }
                }
            }
            let attn = linear(&ctx, &lp.wo, Some(&lp.bo));
            let r1: Vec<f64> = attn.iter().zip(&h[i]).map(|(a, b)| a + b).collect();
            let y1 = layer_norm(&r1, &lp.ln1_g.data, &lp.ln1_b.data, cfg.layer_norm_eps);
            let f: Vec<f64> = linear(&y1, &lp.w1, Some(&lp.b1))
                .into_iter()
                .map(gelu)
                .collect();
            let z = linear(&f, &lp.w2, Some(&lp.b2));
            let r2: Vec<f64> = z.iter().zip(&y1).map(|(a, b)| a + b).collect();
            next.push(layer_norm(
                &r2,
                &lp.ln2_g.data,
                &lp.ln2_b.data,
                cfg.layer_norm_eps,
            ));
        }
        h = next;
    }
    h
}

pub fn max_abs_diff(a: &Mat<f64>, b: &[Vec<f64>]) -> f64 {
    b.iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(move |(j, &v)| (a.at(i, j) - v).abs())
        })
        .fold(0.0, f64::max)
}

pub fn tiny_config(seed: u64) -> EncoderConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = *[1, 2, 4].choose(&mut rng).unwrap();
    EncoderConfig {
        layers: rng.gen_range(1..=2),
        hidden: heads * rng.gen_range(2..=4),
        heads,
        ffn: rng.gen_range(4..=16),
        vocab_size: rng.gen_range(6..=20),
        pos_sizes: [8, 8, 8, 5, 6, 8],
        max_len: 8,
        seed,
        ..Default::default()
    }
}

/// Worst relative gradient error over `seeds` random tiny configurations,
/// with the seed that produced it.
pub fn grad_check_suite(seeds: u64) -> (f64, u64) {
    let mut worst = (0.0, 0);
    for seed in 0..seeds {
        let cfg = tiny_config(seed);
        let p = noisy_params(&cfg, 0.3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let t = rng.gen_range(2..=8);
        let inst = random_instance(&cfg, t, &mut rng);
        let mut labels: Vec<i64> = (0..t)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    rng.gen_range(0..cfg.vocab_size as i64)
                } else {
                    -1
                }
            })
            .collect();
        labels[0] = 1;
        let r = grad_check(&p, inst.input(), &labels, 1e-5).unwrap();
        if r.max_rel_error > worst.0 {
            worst = (r.max_rel_error, seed);
        }
    }
    worst
}

pub fn desk_config(seed: u64, vocab: usize) -> EncoderConfig {
    EncoderConfig {
        vocab_size: vocab,
        pos_sizes: [64, 64, 64, 16, 24, 128],
        max_len: 128,
        seed,
        ..Default::default()
    }
}

/// Largest deviation between encoding a permuted input and permuting the
/// encoding, over `trials` random instances in 64-bit mode.
pub fn equivariance_suite(trials: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..trials {
        let cfg = desk_config(s, 300);
        let p = noisy_params(&cfg, 0.05, s);
        let mut rng = ChaCha8Rng::seed_from_u64(s + 77);
        let t = rng.gen_range(2..=96);
        let inst = random_instance(&cfg, t, &mut rng);
        let mut perm: Vec<usize> = (0..t).collect();
        perm.shuffle(&mut rng);
        let shuffled = Instance {
            tokens: perm.iter().map(|&i| inst.tokens[i]).collect(),
            pos: perm.iter().map(|&i| inst.pos[i]).collect(),
        };
        let h = encode(inst.input(), &p).unwrap();
        let hp = encode(shuffled.input(), &p).unwrap();
        for (r, &i) in perm.iter().enumerate() {
            for (a, b) in hp.row(r).iter().zip(h.row(i)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

pub struct AblationReport {
    /// Zeroed position tables give bit-identical output to the encoder that
    /// never reads them.
    pub bitwise_equal: bool,
    /// Largest deviation of the zeroed encoder from the word-only reference.
    pub reference_deviation: f64,
}

pub fn ablation_suite(trials: u64) -> AblationReport {
    let mut report = AblationReport {
        bitwise_equal: true,
        reference_deviation: 0.0,
    };
    for s in 0..trials {
        let cfg = desk_config(s, 200);
        let mut zeroed = noisy_params(&cfg, 0.05, s);
        for t in &mut zeroed.pos {
            t.fill(0.0);
        }
        let mut plain = zeroed.clone();
        plain.cfg.use_structure = false;
        let mut rng = ChaCha8Rng::seed_from_u64(s + 5);
        let inst = random_instance(&cfg, rng.gen_range(1..=40), &mut rng);
        let a = encode(inst.input(), &zeroed).unwrap();
        let b = encode(inst.input(), &plain).unwrap();
        report.bitwise_equal &= a
            .data
            .iter()
            .zip(&b.data)
            .all(|(x, y)| x.to_bits() == y.to_bits());
        let reference = reference_forward(&inst, &plain, false);
        report.reference_deviation = report.reference_deviation.max(max_abs_diff(&a, &reference));
    }
    report
}

/// Largest deviation of attention rows from summing to one.
pub fn attention_row_sum_error(p: &Params<f64>, inst: &Instance) -> f64 {
    let (_, cache) = encode_with_cache(inst.input(), p, None).unwrap();
    let mut worst: f64 = 0.0;
    for l in 0..p.layers.len() {
        for probs in cache.attention(l) {
            for i in 0..probs.rows {
                worst = worst.max((probs.row(i).iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    worst
}
