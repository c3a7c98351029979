use super::{
    backward, encode, encode_with_cache, mlm_logits, mlm_loss, mlm_loss_and_grad, EncoderError,
    EncoderInput, Params,
};

/// Element-wise relative error with an absolute floor, so entries whose true
/// gradient is numerically zero compare on absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub per_tensor: Vec<(String, f64)>,
    pub checked: usize,
}

fn loss_of(p: &Params<f64>, input: EncoderInput<'_>, labels: &[i64]) -> Result<f64, EncoderError> {
    let h = encode(input, p)?;
    mlm_loss(&mlm_logits(&h, p), labels)
}

/// Compares the analytic MLM gradient of every parameter against central
/// finite differences.
pub fn grad_check(
    p: &Params<f64>,
    input: EncoderInput<'_>,
    labels: &[i64],
    step: f64,
) -> Result<GradCheckReport, EncoderError> {
    let (h, cache) = encode_with_cache(input, p, None)?;
    let mut grads = p.zeros_like();
    let out = mlm_loss_and_grad(&h, labels, p, &mut grads)?;
    backward(&out.dh, &cache, p, &mut grads);

    let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads
        .tensors()
        .into_iter()
        .map(|(_, m)| m.data.clone())
        .collect();
    let mut probe = p.clone();
    let mut per_tensor = Vec::with_capacity(names.len());
    let mut checked = 0;
    for (ti, name) in names.iter().enumerate() {
        if !p.is_trainable(ti) {
            continue;
        }
        let mut worst = 0.0f64;
        let len = analytic[ti].len();
        for j in 0..len {
            let orig = probe.tensors_mut()[ti].data[j];
            probe.tensors_mut()[ti].data[j] = orig + step;
            let up = loss_of(&probe, input, labels)?;
            probe.tensors_mut()[ti].data[j] = orig - step;
            let down = loss_of(&probe, input, labels)?;
            probe.tensors_mut()[ti].data[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(analytic[ti][j], numeric));
            checked += 1;
        }
        per_tensor.push((name.clone(), worst));
    }
    let (worst_tensor, max_rel_error) = per_tensor.iter().cloned().fold(
        (String::new(), 0.0),
        |acc, (n, e)| if e > acc.1 { (n, e) } else { acc },
    );
    Ok(GradCheckReport {
        max_rel_error,
        worst_tensor,
        per_tensor,
        checked,
    })
}
