use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Zip};

use super::{AdnnModel, N_CLASSES};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Sequences padded to a common length, with the number of valid frames of each.
#[derive(Debug, Clone)]
pub struct Batch {
    padded: Array3<f64>,
    lengths: Vec<usize>,
}

impl Batch {
    pub fn new(padded: Array3<f64>, lengths: Vec<usize>) -> Result<Self> {
        let (b, t_max, _) = padded.dim();
        if lengths.len() != b {
            return Err(Error::DimensionMismatch(format!(
                "{b} padded sequences but {} lengths",
                lengths.len()
            )));
        }
        if let Some(i) = lengths.iter().position(|&l| l == 0) {
            return Err(Error::EmptySequence(i));
        }
        if let Some(&l) = lengths.iter().find(|&&l| l > t_max) {
            return Err(Error::DimensionMismatch(format!(
                "length {l} exceeds padded length {t_max}"
            )));
        }
        Ok(Batch { padded, lengths })
    }

    /// Pads `seqs` with zeros to the longest one.
    pub fn from_sequences(seqs: &[ArrayView2<f64>]) -> Result<Self> {
        let d = seqs.first().map_or(0, |s| s.ncols());
        if let Some(bad) = seqs.iter().find(|s| s.ncols() != d) {
            return Err(Error::DimensionMismatch(format!(
                "sequences of width {d} and {}",
                bad.ncols()
            )));
        }
        if let Some(i) = seqs.iter().position(|s| s.nrows() == 0) {
            return Err(Error::EmptySequence(i));
        }
        let t_max = seqs.iter().map(|s| s.nrows()).max().unwrap_or(0);
        let mut padded = Array3::zeros((seqs.len(), t_max, d));
        for (i, seq) in seqs.iter().enumerate() {
            padded.slice_mut(s![i, ..seq.nrows(), ..]).assign(seq);
        }
        Batch::new(padded, seqs.iter().map(|s| s.nrows()).collect())
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn max_len(&self) -> usize {
        self.padded.dim().1
    }

    pub fn dim(&self) -> usize {
        self.padded.dim().2
    }

    /// Valid frames of all sequences stacked row-wise, with row offsets.
    fn stacked(&self) -> (Array2<f64>, Vec<usize>) {
        let total: usize = self.lengths.iter().sum();
        let mut x = Array2::zeros((total, self.dim()));
        let mut offsets = Vec::with_capacity(self.len() + 1);
        let mut at = 0;
        for (i, &len) in self.lengths.iter().enumerate() {
            offsets.push(at);
            x.slice_mut(s![at..at + len, ..])
                .assign(&self.padded.slice(s![i, ..len, ..]));
            at += len;
        }
        offsets.push(at);
        (x, offsets)
    }
}

/// Intermediates of a forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    offsets: Vec<usize>,
    x: Array2<f64>,
    h: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
    pooled: Array2<f64>,
    activated: Array2<f64>,
    /// `B x 2` logits.
    pub logits: Array2<f64>,
}

impl ForwardCache {
    pub fn batch_len(&self) -> usize {
        self.attn.len()
    }

    /// Attention weights over the valid frames of sequence `b`.
    pub fn attention(&self, b: usize) -> &Array2<f64> {
        &self.attn[b]
    }

    /// Attention of sequence `b` laid out on the padded grid: rows and
    /// columns at padded positions are zero.
    pub fn attention_padded(&self, b: usize, t_max: usize) -> Array2<f64> {
        let a = &self.attn[b];
        let mut out = Array2::zeros((t_max, t_max));
        out.slice_mut(s![..a.nrows(), ..a.ncols()]).assign(a);
        out
    }

    /// Layer-normalized frames before gain and shift, stacked over the batch.
    pub fn normalized_frames(&self) -> &Array2<f64> {
        &self.normalized
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

pub fn adnn_forward(model: &AdnnModel, batch: &Batch) -> Result<ForwardCache> {
    if batch.is_empty() {
        return Err(Error::Empty);
    }
    if batch.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} input features, batch has {}",
            model.input_dim(),
            batch.dim()
        )));
    }
    let width = model.width();
    let scale = 1.0 / (width as f64).sqrt();
    let (x, offsets) = batch.stacked();

    let h = x.dot(&model.proj_w) + &model.proj_b;
    let q = h.dot(&model.query_w) + &model.query_b;
    let k = h.dot(&model.key_w) + &model.key_b;
    let v = h.dot(&model.value_w) + &model.value_b;

    let n = x.nrows();
    let mut z = Array2::zeros((n, width));
    let mut attn = Vec::with_capacity(batch.len());
    for w in offsets.windows(2) {
        let rows = s![w[0]..w[1], ..];
        let mut scores = q.slice(rows).dot(&k.slice(rows).t());
        scores *= scale;
        softmax_rows(&mut scores);
        z.slice_mut(rows).assign(&scores.dot(&v.slice(rows)));
        attn.push(scores);
    }

    let mut normalized = z;
    let mut inv_std = Array1::zeros(n);
    for (mut row, is) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / width as f64;
        let var = row.fold(0.0, |acc, &v| acc + (v - mean) * (v - mean)) / width as f64;
        *is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let s = *is;
        row.mapv_inplace(|v| (v - mean) * s);
    }

    let mut pooled = Array2::zeros((batch.len(), width));
    for (b, w) in offsets.windows(2).enumerate() {
        let seq = normalized.slice(s![w[0]..w[1], ..]);
        let mean = seq.mean_axis(Axis(0)).expect("sequences are non-empty");
        // Pooling commutes with the per-channel affine map.
        pooled
            .row_mut(b)
            .assign(&(&mean * &model.norm_gain + &model.norm_shift));
    }
    let activated = pooled.mapv(|p| p * sigmoid(p));
    let logits = activated.dot(&model.head_w) + &model.head_b;

    Ok(ForwardCache {
        offsets,
        x,
        h,
        q,
        k,
        v,
        attn,
        normalized,
        inv_std,
        pooled,
        activated,
        logits,
    })
}

fn check_labels(logits: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if logits.ncols() != N_CLASSES || logits.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "logits {:?} vs {} labels",
            logits.dim(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= N_CLASSES) {
        return Err(Error::InvalidParameter(format!("class index {bad}")));
    }
    Ok(())
}

/// Mean softmax cross-entropy.
pub fn adnn_loss(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Gradient of [`adnn_loss`] with respect to every parameter.
pub fn adnn_backward(model: &AdnnModel, cache: &ForwardCache, labels: &[usize]) -> Result<AdnnModel> {
    check_labels(&cache.logits, labels)?;
    let batch = labels.len();
    let width = model.width();
    let scale = 1.0 / (width as f64).sqrt();

    let mut dlogits = cache.logits.clone();
    softmax_rows(&mut dlogits);
    for (mut row, &y) in dlogits.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
        row.mapv_inplace(|v| v / batch as f64);
    }

    let head_w = cache.activated.t().dot(&dlogits);
    let head_b = dlogits.sum_axis(Axis(0));
    let dact = dlogits.dot(&model.head_w.t());
    let dpooled = Zip::from(&dact)
        .and(&cache.pooled)
        .map_collect(|&g, &p| {
            let sg = sigmoid(p);
            g * (sg + p * sg * (1.0 - sg))
        });

    // Mean pooling spreads the gradient evenly over a sequence's frames.
    let n = cache.x.nrows();
    let mut dnorm = Array2::zeros((n, width));
    let mut norm_gain = Array1::zeros(width);
    let mut norm_shift = Array1::zeros(width);
    for (b, w) in cache.offsets.windows(2).enumerate() {
        let len = (w[1] - w[0]) as f64;
        let dy = dpooled.row(b).mapv(|g| g / len);
        let seq = cache.normalized.slice(s![w[0]..w[1], ..]);
        norm_gain += &(seq.sum_axis(Axis(0)) * &dy);
        norm_shift += &(&dy * len);
        let dzhat = &dy * &model.norm_gain;
        for (i, zrow) in seq.rows().into_iter().enumerate() {
            let mean_g = dzhat.sum() / width as f64;
            let mean_gz = dzhat.dot(&zrow) / width as f64;
            let is = cache.inv_std[w[0] + i];
            let mut out = dnorm.row_mut(w[0] + i);
            Zip::from(&mut out)
                .and(&dzhat)
                .and(&zrow)
                .for_each(|o, &g, &zh| *o = is * (g - mean_g - zh * mean_gz));
        }
    }

    let mut dq = Array2::zeros((n, width));
    let mut dk = Array2::zeros((n, width));
    let mut dv = Array2::zeros((n, width));
    for (b, w) in cache.offsets.windows(2).enumerate() {
        let rows = s![w[0]..w[1], ..];
        let a = &cache.attn[b];
        let dz = dnorm.slice(rows);
        let da = dz.dot(&cache.v.slice(rows).t());
        dv.slice_mut(rows).assign(&a.t().dot(&dz));
        let mut ds = &da * a;
        let row_sums = ds.sum_axis(Axis(1));
        ds = Zip::from(&da)
            .and(a)
            .and_broadcast(&row_sums.insert_axis(Axis(1)))
            .map_collect(|&g, &p, &r| p * (g - r) * scale);
        dq.slice_mut(rows).assign(&ds.dot(&cache.k.slice(rows)));
        dk.slice_mut(rows).assign(&ds.t().dot(&cache.q.slice(rows)));
    }

    let query_w = cache.h.t().dot(&dq);
    let key_w = cache.h.t().dot(&dk);
    let value_w = cache.h.t().dot(&dv);
    let dh = dq.dot(&model.query_w.t()) + dk.dot(&model.key_w.t()) + dv.dot(&model.value_w.t());
    let proj_w = cache.x.t().dot(&dh);

    Ok(AdnnModel {
        proj_w,
        proj_b: dh.sum_axis(Axis(0)),
        query_w,
        query_b: dq.sum_axis(Axis(0)),
        key_w,
        key_b: dk.sum_axis(Axis(0)),
        value_w,
        value_b: dv.sum_axis(Axis(0)),
        norm_gain,
        norm_shift,
        head_w,
        head_b,
    })
}

/// Forward, loss and backward in one call.
pub fn loss_and_grad(model: &AdnnModel, batch: &Batch, labels: &[usize]) -> Result<(f64, AdnnModel)> {
    let cache = adnn_forward(model, batch)?;
    let loss = adnn_loss(&cache.logits, labels)?;
    let grads = adnn_backward(model, &cache, labels)?;
    Ok((loss, grads))
}
