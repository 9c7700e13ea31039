//! Brute-force reference evaluator, written against plain `Vec<Vec<f64>>`
//! without touching the library's numeric code paths. Walk distributions
//! come from explicit dense matrix powers rather than step-by-step
//! vector updates.

#![allow(dead_code)]

pub type Matrix = Vec<Vec<f64>>;

pub fn identity(n: usize) -> Matrix {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let m = b[0].len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for k in 0..b.len() {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn row_normalize(adj: &Matrix) -> Matrix {
    adj.iter()
        .enumerate()
        .map(|(i, row)| {
            let clipped: Vec<f64> = row.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
            let sum: f64 = clipped.iter().sum();
            if sum > 0.0 {
                clipped.iter().map(|x| x / sum).collect()
            } else {
                let mut r = vec![0.0; row.len()];
                r[i] = 1.0;
                r
            }
        })
        .collect()
}

pub fn dotp(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = dotp(v, v).sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Reference gate, `1/(1-x) - 1` on the clamped product.
pub fn gate_ref(e: f64, alpha: f64, eps: f64) -> f64 {
    let mut x = alpha * e;
    if x > 1.0 - eps {
        x = 1.0 - eps;
    }
    if x < -1.0 + eps {
        x = -1.0 + eps;
    }
    1.0 / (1.0 - x) - 1.0
}

/// Truncated geometric series `Σ_{n=1}^{terms} xⁿ`.
pub fn gate_series(x: f64, terms: u32) -> f64 {
    let mut term = 1.0;
    let mut s = 0.0;
    for _ in 0..terms {
        term *= x;
        s += term;
    }
    s
}

/// Scores for every node except the last (the query), using
/// `p^(t) = row_q(Pᵗ)`.
pub fn dense_scores(adj: &Matrix, emb: &Matrix, alpha: f64, steps: usize, eps: f64) -> Vec<f64> {
    let n = adj.len();
    let q = n - 1;
    let p = row_normalize(adj);
    let mut power = identity(n);
    let mut acc = vec![0.0; n];
    for _ in 0..steps {
        power = matmul(&power, &p);
        let dist = power[q].clone();
        let dim = emb[0].len();
        let agg: Vec<f64> = (0..dim)
            .map(|k| (0..n).map(|i| dist[i] * emb[i][k]).sum())
            .collect();
        let na = dotp(&agg, &agg).sqrt();
        let nq = dotp(&emb[q], &emb[q]).sqrt();
        let e = if na > 0.0 && nq > 0.0 {
            dotp(&agg, &emb[q]) / (na * nq)
        } else {
            0.0
        };
        let w = gate_ref(e, alpha, eps);
        for i in 0..n {
            acc[i] += w * dist[i];
        }
    }
    acc.truncate(q);
    acc
}

#[derive(Clone, Debug)]
pub struct Row {
    pub id: String,
    pub visual: Vec<f64>,
    pub textual: Vec<f64>,
}

impl Row {
    pub fn space(&self, mode: usize) -> Vec<f64> {
        match mode {
            0 => unit(&self.visual),
            1 => unit(&self.textual),
            _ => {
                let v = unit(&self.visual);
                let t = unit(&self.textual);
                unit(&[v, t].concat())
            }
        }
    }
}

fn order(a: &(String, f64), b: &(String, f64)) -> std::cmp::Ordering {
    b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0))
}

pub struct RefConfig {
    pub mode: usize,
    pub k1: usize,
    pub k_e: usize,
    pub lambda: [f64; 3],
    pub alpha: f64,
    pub steps: usize,
    pub k2: usize,
    pub space: usize,
    pub eps: f64,
}

pub struct RefSelection {
    pub candidates: Vec<String>,
    pub scores: Vec<(String, f64)>,
    pub exemplars: Vec<String>,
}

/// Whole selection pipeline, recomputed from raw vectors.
pub fn select(kb: &[Row], query: &Row, cfg: &RefConfig) -> RefSelection {
    let qv = query.space(cfg.mode);
    let mut sims: Vec<(String, f64)> = kb
        .iter()
        .filter(|r| r.id != query.id)
        .map(|r| (r.id.clone(), dotp(&qv, &r.space(cfg.mode))))
        .collect();
    sims.sort_by(order);
    sims.truncate(cfg.k1);
    let cands: Vec<&Row> = sims
        .iter()
        .map(|(id, _)| kb.iter().find(|r| &r.id == id).unwrap())
        .collect();
    let candidates: Vec<String> = cands.iter().map(|r| r.id.clone()).collect();
    let n = cands.len();
    if n < 2 {
        return RefSelection {
            exemplars: candidates.iter().take(cfg.k2).cloned().collect(),
            scores: sims,
            candidates,
        };
    }

    let mut adj = vec![vec![0.0; n + 1]; n + 1];
    for mode in 0..3 {
        let lam = cfg.lambda[mode];
        let vecs: Vec<Vec<f64>> = cands.iter().map(|r| r.space(mode)).collect();
        for i in 0..n {
            let mut nb: Vec<(String, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (format!("{j:08}|{}", cands[j].id), dotp(&vecs[i], &vecs[j])))
                .collect();
            // order by similarity, then by sample id (strip the index prefix)
            nb.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap()
                    .then_with(|| a.0[9..].cmp(&b.0[9..]))
            });
            for (key, s) in nb.into_iter().take(cfg.k_e) {
                let j: usize = key[..8].parse().unwrap();
                adj[i][j] += lam * s.max(0.0);
            }
        }
        let qvec = query.space(mode);
        let mut qn: Vec<(String, f64)> = (0..n)
            .map(|j| (format!("{j:08}|{}", cands[j].id), dotp(&qvec, &vecs[j])))
            .collect();
        qn.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then_with(|| a.0[9..].cmp(&b.0[9..]))
        });
        for (key, s) in qn.into_iter().take(cfg.k_e) {
            let j: usize = key[..8].parse().unwrap();
            adj[n][j] += lam * s.max(0.0);
            adj[j][n] += lam * s.max(0.0);
        }
    }

    let mut emb: Matrix = cands.iter().map(|r| r.space(cfg.space)).collect();
    emb.push(query.space(cfg.space));
    let raw = dense_scores(&adj, &emb, cfg.alpha, cfg.steps, cfg.eps);
    let isolated = adj[n].iter().all(|&x| x <= 0.0);
    let mut scores: Vec<(String, f64)> = candidates
        .iter()
        .cloned()
        .zip(raw)
        .map(|(id, s)| (id, if isolated { 0.0 } else { s }))
        .collect();
    if !isolated {
        scores.sort_by(order);
    }
    RefSelection {
        exemplars: scores.iter().take(cfg.k2).map(|(id, _)| id.clone()).collect(),
        scores,
        candidates,
    }
}
