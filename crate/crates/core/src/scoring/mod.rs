//! Frozen encoders, cosine-similarity logits, and temperature softmax.

mod csv_io;
mod encoder;
mod logits;

pub use csv_io::{
    fmt_real, group_by_image, ingest_logits, read_logits_csv, save_logits_csv, write_logits_csv,
    KeyedLogits,
};
pub use encoder::{Encoder, EncoderKind, EncoderSpec};
pub use logits::{cosine_logits, softmax_prob, ClassEmbeddings, LogitVector};
pub(crate) use logits::{argmax, check_tau, log_softmax, softmax};

/// `d cos(f, e_i) / d f` accumulated against upstream gradients `g_i`, plus the
/// per-row gradients `d cos / d e_i` scaled by `g_i`.
///
/// Returns `(grad_feat, grad_rows)` where `grad_rows[i]` has the row width.
pub(crate) fn cosine_backward<T: crate::Scalar>(
    feat: &[T],
    rows: &[Vec<T>],
    cosines: &[T],
    upstream: &[T],
    want_rows: bool,
) -> (Vec<T>, Vec<Vec<T>>) {
    use crate::scalar::norm;
    let fnorm = norm(feat);
    let mut gf = vec![T::zero(); feat.len()];
    let mut grows = Vec::new();
    for ((row, &cos), &g) in rows.iter().zip(cosines).zip(upstream) {
        let rnorm = norm(row);
        // d cos / d f = (e/|e| - cos * f/|f|) / |f|
        for k in 0..feat.len() {
            gf[k] += g * (row[k] / rnorm - cos * feat[k] / fnorm) / fnorm;
        }
        if want_rows {
            grows.push(
                (0..row.len())
                    .map(|k| g * (feat[k] / fnorm - cos * row[k] / rnorm) / rnorm)
                    .collect(),
            );
        }
    }
    (gf, grows)
}
