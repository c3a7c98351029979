use super::{EncoderError, Params};
use crate::masker::IGNORE;
use crate::tensor::{add_matmul_tn, log_sum_exp, matmul, matmul_nt, softmax, Mat, Scalar};

/// Vocabulary scores for every row of `h`: `(h W_l + b_l) word^T`.
pub fn mlm_logits<F: Scalar>(h: &Mat<F>, p: &Params<F>) -> Mat<F> {
    let mut hw = matmul(h, &p.mlm_w);
    hw.add_row_vector(&p.mlm_b.data);
    matmul_nt(&hw, &p.word)
}

/// Vocabulary scores for the selected rows of `h` only.
pub fn mlm_row_logits<F: Scalar>(h: &Mat<F>, rows: &[usize], p: &Params<F>) -> Mat<F> {
    let mut hs = Mat::zeros(rows.len(), h.cols);
    for (r, &i) in rows.iter().enumerate() {
        hs.row_mut(r).copy_from_slice(h.row(i));
    }
    mlm_logits(&hs, p)
}

/// Mean negative log-likelihood of the labels over non-ignored rows.
pub fn mlm_loss<F: Scalar>(logits: &Mat<F>, labels: &[i64]) -> Result<F, EncoderError> {
    let mut total = F::zero();
    let mut n = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        if label == IGNORE {
            continue;
        }
        let row = logits.row(i);
        total += log_sum_exp(row) - row[label as usize];
        n += 1;
    }
    if n == 0 {
        return Err(EncoderError::NoSelectedPositions);
    }
    Ok(total / F::from_usize(n).unwrap())
}

#[derive(Debug, Clone)]
pub struct MlmOutput<F> {
    pub loss: F,
    /// Gradient of the loss with respect to the encoder output.
    pub dh: Mat<F>,
    /// Selected row indices and their argmax predictions.
    pub predictions: Vec<(usize, u32)>,
}

/// Loss, encoder-output gradient and head gradients (accumulated into
/// `grads`), computing logits only for labelled rows.
pub fn mlm_loss_and_grad<F: Scalar>(
    h: &Mat<F>,
    labels: &[i64],
    p: &Params<F>,
    grads: &mut Params<F>,
) -> Result<MlmOutput<F>, EncoderError> {
    let rows: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != IGNORE)
        .map(|(i, _)| i)
        .collect();
    if rows.is_empty() {
        return Err(EncoderError::NoSelectedPositions);
    }
    let d = h.cols;
    let mut hs = Mat::zeros(rows.len(), d);
    for (r, &i) in rows.iter().enumerate() {
        hs.row_mut(r).copy_from_slice(h.row(i));
    }
    let mut hw = matmul(&hs, &p.mlm_w);
    hw.add_row_vector(&p.mlm_b.data);
    let mut dlogits = matmul_nt(&hw, &p.word);
    let n = F::from_usize(rows.len()).unwrap();
    let mut loss = F::zero();
    let mut predictions = Vec::with_capacity(rows.len());
    for (r, &i) in rows.iter().enumerate() {
        let label = labels[i] as usize;
        let row = dlogits.row_mut(r);
        let best = row
            .iter()
            .enumerate()
            .fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
        predictions.push((i, best as u32));
        loss += log_sum_exp(row) - row[label];
        softmax(row);
        row[label] -= F::one();
        row.iter_mut().for_each(|x| *x = *x / n);
    }
    add_matmul_tn(&mut grads.word, &dlogits, &hw);
    let dhw = matmul(&dlogits, &p.word);
    add_matmul_tn(&mut grads.mlm_w, &hs, &dhw);
    dhw.col_sums_into(&mut grads.mlm_b.data);
    let dhs = matmul_nt(&dhw, &p.mlm_w);
    let mut dh = Mat::zeros(h.rows, d);
    for (r, &i) in rows.iter().enumerate() {
        dh.row_mut(i).copy_from_slice(dhs.row(r));
    }
    Ok(MlmOutput {
        loss: loss / n,
        dh,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_vocab() {
        let logits = Mat::<f64>::zeros(3, 100);
        let loss = mlm_loss(&logits, &[5, IGNORE, 99]).unwrap();
        assert!((loss - 100f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn margin_drives_loss_down() {
        let mut prev = f64::INFINITY;
        for margin in [0.0, 1.0, 2.0, 5.0, 10.0, 30.0] {
            let mut logits = Mat::<f64>::zeros(1, 10);
            logits.data[3] = margin;
            let loss = mlm_loss(&logits, &[3]).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn all_ignored_is_an_error() {
        let logits = Mat::<f64>::zeros(2, 4);
        assert_eq!(
            mlm_loss(&logits, &[IGNORE, IGNORE]),
            Err(EncoderError::NoSelectedPositions)
        );
    }

    #[test]
    fn fixed_instance() {
        // log(e^1 + e^2 + e^0) - 2 and log(e^0 + e^0 + e^3) - 0, averaged.
        let logits = Mat::from_vec(2, 3, vec![1.0f64, 2.0, 0.0, 0.0, 0.0, 3.0]);
        let a = (1f64.exp() + 2f64.exp() + 1.0).ln() - 2.0;
        let b = (2.0 + 3f64.exp()).ln();
        let loss = mlm_loss(&logits, &[1, 0]).unwrap();
        assert!((loss - (a + b) / 2.0).abs() < 1e-12);
    }
}
