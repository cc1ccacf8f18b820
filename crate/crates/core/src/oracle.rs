//! Reference implementations of every loss written as plain nested loops over
//! `Vec<Vec<f64>>`, sharing no code with [`crate::losses`]. Tests and the
//! `selftest` command compare the two.

/// Rows of a matrix.
pub type Rows = Vec<Vec<f64>>;

const FLOOR: f64 = 1e-12;

fn softened(row: &[f64], tau: f64) -> Vec<f64> {
    let mut top = f64::NEG_INFINITY;
    for &z in row {
        if z > top {
            top = z;
        }
    }
    let mut e = Vec::with_capacity(row.len());
    let mut sum = 0.0;
    for &z in row {
        let v = ((z - top) / tau).exp();
        sum += v;
        e.push(v);
    }
    for v in &mut e {
        *v /= sum;
    }
    e
}

/// `-(1/n) sum_i sum_c y_ic log softmax(z_i)_c`
pub fn soft_ce(logits: &Rows, targets: &Rows) -> f64 {
    let n = logits.len();
    let mut total = 0.0;
    for i in 0..n {
        let p = softened(&logits[i], 1.0);
        for c in 0..p.len() {
            total -= targets[i][c] * p[c].max(FLOOR).ln();
        }
    }
    total / n as f64
}

/// `tau^2 (1/n) sum_i sum_c q_ic (log q_ic - log p_ic)` with `q` the softened
/// teacher and `p` the softened student.
pub fn kd_kl(student: &Rows, teacher: &Rows, tau: f64) -> f64 {
    let n = student.len();
    let mut total = 0.0;
    for i in 0..n {
        let p = softened(&student[i], tau);
        let q = softened(&teacher[i], tau);
        for c in 0..p.len() {
            if q[c] > 0.0 {
                total += q[c] * (q[c].max(FLOOR).ln() - p[c].max(FLOOR).ln());
            }
        }
    }
    tau * tau * total / n as f64
}

/// Mean of `kd_kl(peer j, peer k)` over the other peers.
pub fn dml(all: &[Rows], j: usize, tau: f64) -> f64 {
    let mut total = 0.0;
    for (k, other) in all.iter().enumerate() {
        if k != j {
            total += kd_kl(&all[j], other, tau);
        }
    }
    total / (all.len() - 1) as f64
}

/// `1/(J-1) sum_{k != j} || mean_i f_j(i) - mean_i f_k(i) ||^2`
pub fn mmd(all: &[Rows], j: usize) -> f64 {
    let mean = |f: &Rows| {
        let mut m = vec![0.0; f[0].len()];
        for row in f {
            for (a, b) in m.iter_mut().zip(row) {
                *a += b;
            }
        }
        for a in &mut m {
            *a /= f.len() as f64;
        }
        m
    };
    let mj = mean(&all[j]);
    let mut total = 0.0;
    for (k, fk) in all.iter().enumerate() {
        if k == j {
            continue;
        }
        let mk = mean(fk);
        for c in 0..mj.len() {
            total += (mj[c] - mk[c]) * (mj[c] - mk[c]);
        }
    }
    total / (all.len() - 1) as f64
}

/// Distillation from the teacher's logits.
pub fn pt(student: &Rows, teacher: &Rows, tau: f64) -> f64 {
    kd_kl(student, teacher, tau)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference(x: &Rows, step: f64, mut f: impl FnMut(&Rows) -> f64) -> Rows {
    let mut g = vec![vec![0.0; x[0].len()]; x.len()];
    let mut probe = x.clone();
    for i in 0..x.len() {
        for c in 0..x[i].len() {
            probe[i][c] = x[i][c] + step;
            let up = f(&probe);
            probe[i][c] = x[i][c] - step;
            let down = f(&probe);
            probe[i][c] = x[i][c];
            g[i][c] = (up - down) / (2.0 * step);
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        // uniform logits against a one-hot target: ln K
        let ce = soft_ce(&vec![vec![0.0; 4]], &vec![vec![0.0, 1.0, 0.0, 0.0]]);
        assert!((ce - 4f64.ln()).abs() < 1e-15);
        // identical distributions
        let z = vec![vec![1.0, -2.0, 0.5]];
        assert!(kd_kl(&z, &z, 3.0).abs() < 1e-15);
        // KL(Bern(0.5) || Bern(p)) at tau = 1
        let s = vec![vec![0.0, (3.0f64).ln()]];
        let t = vec![vec![0.0, 0.0]];
        let want = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((kd_kl(&s, &t, 1.0) - want).abs() < 1e-14);
        // mean difference (1, 2) between two peers
        let a = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let b = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
        assert!((mmd(&[a, b], 0) - 5.0).abs() < 1e-15);
    }
}
