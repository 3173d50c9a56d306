//! Tiny dense networks with manual backpropagation.
//!
//! Both detector nets are small enough that plain nested loops beat any
//! dependency: an RNN with a tanh recurrence and a sigmoid head, and a
//! one-hidden-layer ReLU MLP. Training is full-batch gradient descent on
//! the mean binary cross-entropy.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 32;

const FILE_MAGIC: &str = "dynarag-net v1";

/// Hyperparameters shared by both trainers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 200, lr: 0.05, seed: 42 }
    }
}

/// Recurrent classifier: tanh recurrence, sigmoid head on the final state.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnNet {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// hidden x input.
    pub w_in: Vec<Vec<f64>>,
    /// hidden x hidden.
    pub w_rec: Vec<Vec<f64>>,
    pub b_h: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

/// One-hidden-layer perceptron: affine, ReLU, affine, sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// hidden x input.
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn bce(y_hat: f64, y: f64) -> f64 {
    let p = y_hat.clamp(1e-12, 1.0 - 1e-12);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let bound = 1.0 / (cols as f64).sqrt();
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-bound..bound)).collect()).collect()
}

fn init_vector(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

impl RnnNet {
    /// Fresh net with uniform +-1/sqrt(fan_in) weights and zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, seed: u64) -> RnnNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RnnNet {
            input_dim,
            hidden_dim,
            w_in: init_matrix(&mut rng, hidden_dim, input_dim),
            w_rec: init_matrix(&mut rng, hidden_dim, hidden_dim),
            b_h: vec![0.0; hidden_dim],
            w_out: init_vector(&mut rng, hidden_dim, hidden_dim),
            b_out: 0.0,
        }
    }

    /// Probability in (0,1) for a feature sequence.
    pub fn forward(&self, seq: &[Vec<f64>]) -> Result<f64> {
        Ok(self.forward_states(seq)?.1)
    }

    /// All hidden states (h_0 .. h_T) plus the output probability.
    fn forward_states(&self, seq: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
        if seq.is_empty() {
            return Err(Error::Contract("rnn input sequence is empty".into()));
        }
        let mut states = Vec::with_capacity(seq.len() + 1);
        states.push(vec![0.0; self.hidden_dim]);
        for (t, x) in seq.iter().enumerate() {
            if x.len() != self.input_dim {
                return Err(Error::Contract(format!(
                    "rnn step {t} has {} features, net expects {}",
                    x.len(),
                    self.input_dim
                )));
            }
            let prev = states.last().expect("seeded with h_0");
            let mut h = vec![0.0; self.hidden_dim];
            for i in 0..self.hidden_dim {
                let z = self.b_h[i] + dot(&self.w_in[i], x) + dot(&self.w_rec[i], prev);
                h[i] = z.tanh();
            }
            states.push(h);
        }
        let last = states.last().expect("non-empty");
        let y = sigmoid(dot(&self.w_out, last) + self.b_out);
        Ok((states, y))
    }

    /// Mean BCE over the batch and its gradient, flattened per [`Self::params`].
    pub fn loss_and_grads(&self, batch: &[(Vec<Vec<f64>>, f64)]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Contract("rnn batch is empty".into()));
        }
        let n = batch.len() as f64;
        let h = self.hidden_dim;
        let mut g_w_in = vec![vec![0.0; self.input_dim]; h];
        let mut g_w_rec = vec![vec![0.0; h]; h];
        let mut g_b_h = vec![0.0; h];
        let mut g_w_out = vec![0.0; h];
        let mut g_b_out = 0.0;
        let mut loss = 0.0;
        for (seq, y) in batch {
            let (states, y_hat) = self.forward_states(seq)?;
            loss += bce(y_hat, *y) / n;
            let dz_out = (y_hat - y) / n;
            let h_last = &states[seq.len()];
            for i in 0..h {
                g_w_out[i] += dz_out * h_last[i];
            }
            g_b_out += dz_out;
            let mut dh: Vec<f64> = self.w_out.iter().map(|w| w * dz_out).collect();
            for t in (0..seq.len()).rev() {
                let h_t = &states[t + 1];
                let h_prev = &states[t];
                let mut dz = vec![0.0; h];
                for i in 0..h {
                    dz[i] = dh[i] * (1.0 - h_t[i] * h_t[i]);
                    g_b_h[i] += dz[i];
                    for (j, x) in seq[t].iter().enumerate() {
                        g_w_in[i][j] += dz[i] * x;
                    }
                    for j in 0..h {
                        g_w_rec[i][j] += dz[i] * h_prev[j];
                    }
                }
                for j in 0..h {
                    dh[j] = (0..h).map(|i| self.w_rec[i][j] * dz[i]).sum();
                }
            }
        }
        let mut flat = Vec::with_capacity(self.n_params());
        flat.extend(g_w_in.iter().flatten());
        flat.extend(g_w_rec.iter().flatten());
        flat.extend(&g_b_h);
        flat.extend(&g_w_out);
        flat.push(g_b_out);
        Ok((loss, flat))
    }

    pub fn n_params(&self) -> usize {
        self.hidden_dim * self.input_dim + self.hidden_dim * self.hidden_dim + 2 * self.hidden_dim
            + 1
    }

    /// Flattened parameters: w_in, w_rec, b_h, w_out, b_out.
    pub fn params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.n_params());
        flat.extend(self.w_in.iter().flatten());
        flat.extend(self.w_rec.iter().flatten());
        flat.extend(&self.b_h);
        flat.extend(&self.w_out);
        flat.push(self.b_out);
        flat
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Contract(format!(
                "expected {} rnn parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for row in &mut self.w_in {
            for v in row {
                *v = it.next().expect("length checked");
            }
        }
        for row in &mut self.w_rec {
            for v in row {
                *v = it.next().expect("length checked");
            }
        }
        for v in &mut self.b_h {
            *v = it.next().expect("length checked");
        }
        for v in &mut self.w_out {
            *v = it.next().expect("length checked");
        }
        self.b_out = it.next().expect("length checked");
        Ok(())
    }

    /// Trains a fresh net by full-batch descent; returns it with the
    /// per-epoch mean loss curve.
    pub fn train(
        batch: &[(Vec<Vec<f64>>, f64)],
        input_dim: usize,
        hidden_dim: usize,
        cfg: &TrainConfig,
    ) -> Result<(RnnNet, Vec<f64>)> {
        let mut net = RnnNet::init(input_dim, hidden_dim, cfg.seed);
        let start = net.params();
        let curve = descend(cfg, |p| {
            net.set_params(p).expect("descend keeps the length");
            net.loss_and_grads(batch)
        }, start)?;
        Ok((net, curve))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let dims = vec![self.input_dim, self.hidden_dim];
        let sections: Vec<(&str, Vec<&[f64]>)> = vec![
            ("w_in", self.w_in.iter().map(Vec::as_slice).collect()),
            ("w_rec", self.w_rec.iter().map(Vec::as_slice).collect()),
            ("b_h", vec![&self.b_h]),
            ("w_out", vec![&self.w_out]),
            ("b_out", vec![std::slice::from_ref(&self.b_out)]),
        ];
        save_net(path, "rnn", &dims, &sections)
    }

    pub fn load(path: &Path) -> Result<RnnNet> {
        let (dims, mut sections) = load_net(path, "rnn", 2)?;
        let (input_dim, hidden_dim) = (dims[0], dims[1]);
        let mut take = |name: &str, rows: usize, cols: usize| -> Result<Vec<Vec<f64>>> {
            take_section(&mut sections, path, name, rows, cols)
        };
        let net = RnnNet {
            input_dim,
            hidden_dim,
            w_in: take("w_in", hidden_dim, input_dim)?,
            w_rec: take("w_rec", hidden_dim, hidden_dim)?,
            b_h: take("b_h", 1, hidden_dim)?.remove(0),
            w_out: take("w_out", 1, hidden_dim)?.remove(0),
            b_out: take("b_out", 1, 1)?[0][0],
        };
        Ok(net)
    }
}

impl MlpNet {
    /// Fresh net with uniform +-1/sqrt(fan_in) weights and zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, seed: u64) -> MlpNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpNet {
            input_dim,
            hidden_dim,
            w1: init_matrix(&mut rng, hidden_dim, input_dim),
            b1: vec![0.0; hidden_dim],
            w2: init_vector(&mut rng, hidden_dim, hidden_dim),
            b2: 0.0,
        }
    }

    /// Probability in (0,1) for a feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_hidden(x)?.1)
    }

    /// Pre-activation hidden layer plus the output probability.
    fn forward_hidden(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        if x.len() != self.input_dim {
            return Err(Error::Contract(format!(
                "mlp input has {} features, net expects {}",
                x.len(),
                self.input_dim
            )));
        }
        let z1: Vec<f64> =
            (0..self.hidden_dim).map(|i| self.b1[i] + dot(&self.w1[i], x)).collect();
        let a: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let y = sigmoid(dot(&self.w2, &a) + self.b2);
        Ok((z1, y))
    }

    /// Mean BCE over the batch and its gradient, flattened per [`Self::params`].
    pub fn loss_and_grads(&self, batch: &[(Vec<f64>, f64)]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Contract("mlp batch is empty".into()));
        }
        let n = batch.len() as f64;
        let h = self.hidden_dim;
        let mut g_w1 = vec![vec![0.0; self.input_dim]; h];
        let mut g_b1 = vec![0.0; h];
        let mut g_w2 = vec![0.0; h];
        let mut g_b2 = 0.0;
        let mut loss = 0.0;
        for (x, y) in batch {
            let (z1, y_hat) = self.forward_hidden(x)?;
            loss += bce(y_hat, *y) / n;
            let dz2 = (y_hat - y) / n;
            g_b2 += dz2;
            for i in 0..h {
                let a_i = z1[i].max(0.0);
                g_w2[i] += dz2 * a_i;
                if z1[i] > 0.0 {
                    let dz1 = self.w2[i] * dz2;
                    g_b1[i] += dz1;
                    for (j, xj) in x.iter().enumerate() {
                        g_w1[i][j] += dz1 * xj;
                    }
                }
            }
        }
        let mut flat = Vec::with_capacity(self.n_params());
        flat.extend(g_w1.iter().flatten());
        flat.extend(&g_b1);
        flat.extend(&g_w2);
        flat.push(g_b2);
        Ok((loss, flat))
    }

    pub fn n_params(&self) -> usize {
        self.hidden_dim * self.input_dim + 2 * self.hidden_dim + 1
    }

    /// Flattened parameters: w1, b1, w2, b2.
    pub fn params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.n_params());
        flat.extend(self.w1.iter().flatten());
        flat.extend(&self.b1);
        flat.extend(&self.w2);
        flat.push(self.b2);
        flat
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Contract(format!(
                "expected {} mlp parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for row in &mut self.w1 {
            for v in row {
                *v = it.next().expect("length checked");
            }
        }
        for v in &mut self.b1 {
            *v = it.next().expect("length checked");
        }
        for v in &mut self.w2 {
            *v = it.next().expect("length checked");
        }
        self.b2 = it.next().expect("length checked");
        Ok(())
    }

    /// Trains a fresh net by full-batch descent; returns it with the
    /// per-epoch mean loss curve.
    pub fn train(
        batch: &[(Vec<f64>, f64)],
        input_dim: usize,
        hidden_dim: usize,
        cfg: &TrainConfig,
    ) -> Result<(MlpNet, Vec<f64>)> {
        let mut net = MlpNet::init(input_dim, hidden_dim, cfg.seed);
        let start = net.params();
        let curve = descend(cfg, |p| {
            net.set_params(p).expect("descend keeps the length");
            net.loss_and_grads(batch)
        }, start)?;
        Ok((net, curve))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let dims = vec![self.input_dim, self.hidden_dim];
        let sections: Vec<(&str, Vec<&[f64]>)> = vec![
            ("w1", self.w1.iter().map(Vec::as_slice).collect()),
            ("b1", vec![&self.b1]),
            ("w2", vec![&self.w2]),
            ("b2", vec![std::slice::from_ref(&self.b2)]),
        ];
        save_net(path, "mlp", &dims, &sections)
    }

    pub fn load(path: &Path) -> Result<MlpNet> {
        let (dims, mut sections) = load_net(path, "mlp", 2)?;
        let (input_dim, hidden_dim) = (dims[0], dims[1]);
        let mut take = |name: &str, rows: usize, cols: usize| -> Result<Vec<Vec<f64>>> {
            take_section(&mut sections, path, name, rows, cols)
        };
        let net = MlpNet {
            input_dim,
            hidden_dim,
            w1: take("w1", hidden_dim, input_dim)?,
            b1: take("b1", 1, hidden_dim)?.remove(0),
            w2: take("w2", 1, hidden_dim)?.remove(0),
            b2: take("b2", 1, 1)?[0][0],
        };
        Ok(net)
    }
}

/// Shared descent loop over flattened parameters.
fn descend<F>(cfg: &TrainConfig, mut loss_and_grads: F, mut params: Vec<f64>) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if cfg.lr <= 0.0 || !cfg.lr.is_finite() {
        return Err(Error::Contract(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grads) = loss_and_grads(&params)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("loss became non-finite at epoch {epoch}")));
        }
        for (p, g) in params.iter_mut().zip(&grads) {
            *p -= cfg.lr * g;
        }
        curve.push(loss);
    }
    // Push the final parameters into the caller's net.
    loss_and_grads(&params)?;
    Ok(curve)
}

/// Writes a net as text: magic, kind, dims, then named sections whose
/// values use the shortest decimal that round-trips exactly.
fn save_net(path: &Path, kind: &str, dims: &[usize], sections: &[(&str, Vec<&[f64]>)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let emit = |out: &mut BufWriter<std::fs::File>, s: String| {
        writeln!(out, "{s}").map_err(|e| Error::io(path, e))
    };
    emit(&mut out, FILE_MAGIC.to_string())?;
    emit(&mut out, format!("kind {kind}"))?;
    let dims_str: Vec<String> = dims.iter().map(usize::to_string).collect();
    emit(&mut out, format!("dims {}", dims_str.join(" ")))?;
    for (name, rows) in sections {
        emit(&mut out, format!("section {name} {} {}", rows.len(), rows[0].len()))?;
        for row in rows {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            emit(&mut out, cells.join(" "))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

type Sections = Vec<(String, Vec<Vec<f64>>)>;

/// Reads a net file, checking magic, kind and dim count.
fn load_net(path: &Path, kind: &str, n_dims: usize) -> Result<(Vec<usize>, Sections)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let mut next = || -> Result<Option<String>> {
        match lines.next() {
            Some(line) => Ok(Some(line.map_err(|e| Error::io(path, e))?)),
            None => Ok(None),
        }
    };
    let bad = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let magic = next()?.ok_or_else(|| bad("empty file".into()))?;
    if magic != FILE_MAGIC {
        return Err(bad(format!("not a weight file (header {magic:?})")));
    }
    let kind_line = next()?.ok_or_else(|| bad("missing kind line".into()))?;
    let found_kind = kind_line
        .strip_prefix("kind ")
        .ok_or_else(|| bad(format!("expected kind line, got {kind_line:?}")))?;
    if found_kind != kind {
        return Err(bad(format!("file holds a {found_kind} net, expected {kind}")));
    }
    let dims_line = next()?.ok_or_else(|| bad("missing dims line".into()))?;
    let dims_str =
        dims_line.strip_prefix("dims ").ok_or_else(|| bad(format!("expected dims line, got {dims_line:?}")))?;
    let dims: Vec<usize> = dims_str
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| bad(format!("bad dimension {s:?}"))))
        .collect::<Result<_>>()?;
    if dims.len() != n_dims || dims.iter().any(|&d| d == 0) {
        return Err(bad(format!("expected {n_dims} nonzero dims, got {dims:?}")));
    }
    let mut sections = Vec::new();
    while let Some(line) = next()? {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "section" {
            return Err(bad(format!("expected a section header, got {line:?}")));
        }
        let name = parts[1].to_string();
        let rows: usize = parts[2].parse().map_err(|_| bad(format!("bad row count in {line:?}")))?;
        let cols: usize = parts[3].parse().map_err(|_| bad(format!("bad col count in {line:?}")))?;
        let mut data = Vec::with_capacity(rows);
        for r in 0..rows {
            let row_line =
                next()?.ok_or_else(|| bad(format!("section {name} truncated at row {r}")))?;
            let row: Vec<f64> = row_line
                .split_whitespace()
                .map(|s| {
                    s.parse::<f64>().map_err(|_| bad(format!("section {name}: bad value {s:?}")))
                })
                .collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(bad(format!(
                    "section {name} row {r} has {} values, expected {cols}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("section {name} row {r} has a non-finite value")));
            }
            data.push(row);
        }
        sections.push((name, data));
    }
    Ok((dims, sections))
}

/// Pops a named section, checking its shape.
fn take_section(
    sections: &mut Sections,
    path: &Path,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<Vec<Vec<f64>>> {
    let idx = sections
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::Format(format!("{}: missing section {name}", path.display())))?;
    let (_, data) = sections.remove(idx);
    if data.len() != rows || data.iter().any(|r| r.len() != cols) {
        return Err(Error::Format(format!(
            "{}: section {name} is not {rows}x{cols}",
            path.display()
        )));
    }
    Ok(data)
}
