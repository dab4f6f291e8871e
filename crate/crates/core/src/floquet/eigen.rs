//! Dense nonsymmetric eigenvalue solver: balancing, Householder reduction
//! to Hessenberg form, implicitly shifted QR with the Francis double shift,
//! and an inverse-iteration residual check on the dominant eigenvalues.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::solver::Matrix;

/// All eigenvalues of a real square matrix.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<Complex64>> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::invalid("eigenvalue solver requires a square matrix"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    for i in 0..n {
        for &v in a.row(i) {
            if !v.is_finite() {
                return Err(Error::invalid("matrix entries must be finite"));
            }
        }
    }
    let mut h = a.clone();
    balance(&mut h);
    hessenberg(&mut h);
    let eigs = hqr(&mut h)?;
    verify_dominant(a, &eigs)?;
    Ok(eigs)
}

/// Parlett–Reinsch balancing by powers of two; a diagonal similarity, so
/// the spectrum is untouched.
fn balance(a: &mut Matrix) {
    let n = a.rows();
    let radix: f64 = 2.0;
    let sqrdx = radix * radix;
    loop {
        let mut done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / radix;
                let mut f = 1.0;
                let s = c + r;
                let mut c2 = c;
                while c2 < g {
                    f *= radix;
                    c2 *= sqrdx;
                }
                g = r * radix;
                while c2 > g {
                    f /= radix;
                    c2 /= sqrdx;
                }
                if (c2 + r / f) / f < 0.95 * s && f != 1.0 {
                    done = false;
                    let ginv = 1.0 / f;
                    for j in 0..n {
                        a[(i, j)] *= ginv;
                    }
                    for j in 0..n {
                        a[(j, i)] *= f;
                    }
                }
            }
        }
        if done {
            break;
        }
    }
}

/// Householder reduction to upper Hessenberg form (in place, transforms not
/// accumulated).
fn hessenberg(a: &mut Matrix) {
    let n = a.rows();
    if n < 3 {
        return;
    }
    let mut ort = vec![0.0; n];
    for m in 1..n - 1 {
        let mut scale = 0.0;
        for i in m..n {
            scale += a[(i, m - 1)].abs();
        }
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..n).rev() {
            ort[i] = a[(i, m - 1)] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;

        // apply the Householder similarity from both sides
        for j in m..n {
            let mut f = 0.0;
            for i in (m..n).rev() {
                f += ort[i] * a[(i, j)];
            }
            f /= hh;
            for i in m..n {
                a[(i, j)] -= f * ort[i];
            }
        }
        for i in 0..n {
            let mut f = 0.0;
            for j in (m..n).rev() {
                f += ort[j] * a[(i, j)];
            }
            f /= hh;
            for j in m..n {
                a[(i, j)] -= f * ort[j];
            }
        }
        a[(m, m - 1)] = scale * g;
        for i in m + 1..n {
            a[(i, m - 1)] = 0.0;
        }
    }
}

/// Eigenvalues of an upper Hessenberg matrix by the implicitly shifted QR
/// iteration with Francis double shifts and exceptional shifts every ten
/// sweeps.
fn hqr(h: &mut Matrix) -> Result<Vec<Complex64>> {
    let n = h.rows();
    let mut eigs = vec![Complex64::new(0.0, 0.0); n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += h[(i, j)].abs();
        }
    }
    if anorm == 0.0 {
        return Ok(eigs);
    }
    let eps = f64::EPSILON;
    let mut total_sweeps = 0usize;
    let max_sweeps = 30 * n.max(1);

    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            // look for a negligible subdiagonal element
            let mut l = nn;
            while l >= 1 {
                let s = h[(l as usize - 1, l as usize - 1)].abs()
                    + h[(l as usize, l as usize)].abs();
                let s = if s == 0.0 { anorm } else { s };
                if h[(l as usize, l as usize - 1)].abs() <= eps * s {
                    break;
                }
                l -= 1;
            }
            let x = h[(nn as usize, nn as usize)];
            if l == nn {
                eigs[nn as usize] = Complex64::new(x + t, 0.0);
                nn -= 1;
                break;
            }
            let y = h[(nn as usize - 1, nn as usize - 1)];
            let w = h[(nn as usize, nn as usize - 1)] * h[(nn as usize - 1, nn as usize)];
            if l == nn - 1 {
                // 2×2 block: real pair or complex conjugates
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                let x = x + t;
                if q >= 0.0 {
                    let z = p + z.copysign(p);
                    eigs[nn as usize - 1] = Complex64::new(x + z, 0.0);
                    eigs[nn as usize] = if z != 0.0 {
                        Complex64::new(x - w / z, 0.0)
                    } else {
                        Complex64::new(x + z, 0.0)
                    };
                } else {
                    eigs[nn as usize - 1] = Complex64::new(x + p, z);
                    eigs[nn as usize] = Complex64::new(x + p, -z);
                }
                nn -= 2;
                break;
            }
            if total_sweeps >= max_sweeps {
                return Err(Error::Eigensolver(format!(
                    "QR iteration exceeded {max_sweeps} sweeps"
                )));
            }
            let (mut x, mut y, mut w) = (x, y, w);
            if its == 10 || its == 20 {
                // exceptional shift
                t += x;
                for i in 0..=nn as usize {
                    h[(i, i)] -= x;
                }
                let s = h[(nn as usize, nn as usize - 1)].abs()
                    + h[(nn as usize - 1, nn as usize - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            total_sweeps += 1;

            // double-shift sweep start row
            let mut m = nn - 2;
            let (mut p, mut q, mut r) = (0.0, 0.0, 0.0);
            while m >= l {
                let mu = m as usize;
                let z = h[(mu, mu)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / h[(mu + 1, mu)] + h[(mu, mu + 1)];
                q = h[(mu + 1, mu + 1)] - z - rr - ss;
                r = h[(mu + 2, mu + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = h[(mu, mu - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs()
                    * (h[(mu - 1, mu - 1)].abs() + z.abs() + h[(mu + 1, mu + 1)].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nn {
                h[(i as usize, i as usize - 2)] = 0.0;
                if i > m + 2 {
                    h[(i as usize, i as usize - 3)] = 0.0;
                }
            }
            // Householder QR sweep chasing the bulge
            for k in m..=nn - 1 {
                let ku = k as usize;
                if k != m {
                    p = h[(ku, ku - 1)];
                    q = h[(ku + 1, ku - 1)];
                    r = if k != nn - 1 { h[(ku + 2, ku - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s == 0.0 {
                    continue;
                }
                if k == m {
                    if l != m {
                        h[(ku, ku - 1)] = -h[(ku, ku - 1)];
                    }
                } else {
                    h[(ku, ku - 1)] = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                // row modification
                for j in ku..=nn as usize {
                    let mut pp = h[(ku, j)] + q * h[(ku + 1, j)];
                    if k != nn - 1 {
                        pp += r * h[(ku + 2, j)];
                        h[(ku + 2, j)] -= pp * z;
                    }
                    h[(ku + 1, j)] -= pp * y;
                    h[(ku, j)] -= pp * x;
                }
                // column modification
                let mmin = if nn < k + 4 { nn as usize } else { ku + 3 };
                for i in l as usize..=mmin {
                    let mut pp = x * h[(i, ku)] + y * h[(i, ku + 1)];
                    if k != nn - 1 {
                        pp += z * h[(i, ku + 2)];
                        h[(i, ku + 2)] -= pp * r;
                    }
                    h[(i, ku + 1)] -= pp * q;
                    h[(i, ku)] -= pp;
                }
            }
        }
    }
    Ok(eigs)
}

/// LU solve in complex arithmetic for the inverse-iteration check.
fn complex_lu_solve(a: &mut [Complex64], n: usize, b: &mut [Complex64]) -> Result<()> {
    for k in 0..n {
        let mut p = k;
        let mut best = a[k * n + k].norm();
        for i in k + 1..n {
            let v = a[i * n + k].norm();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best < 1e-300 {
            return Err(Error::SingularMatrix { pivot: best });
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        let pivot = a[k * n + k];
        for i in k + 1..n {
            let f = a[i * n + k] / pivot;
            a[i * n + k] = f;
            if f != Complex64::new(0.0, 0.0) {
                for j in k + 1..n {
                    let v = a[k * n + j];
                    a[i * n + j] -= f * v;
                }
                b[i] -= f * b[k];
            }
        }
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[i * n + j] * b[j];
        }
        b[i] = s / a[i * n + i];
    }
    Ok(())
}

/// Re-derive eigenvectors for the five largest-modulus eigenvalues by
/// shifted inverse iteration and insist on small residuals.
fn verify_dominant(a: &Matrix, eigs: &[Complex64]) -> Result<()> {
    let n = a.rows();
    if n < 2 {
        return Ok(());
    }
    let anorm = a.norm_inf();
    if anorm == 0.0 {
        return Ok(());
    }
    let mut order: Vec<usize> = (0..eigs.len()).collect();
    order.sort_by(|&i, &j| eigs[j].norm().total_cmp(&eigs[i].norm()));

    for &idx in order.iter().take(5) {
        let lambda = eigs[idx];
        let mut best = f64::INFINITY;
        for attempt in 0..4 {
            let shift = lambda
                + Complex64::new(
                    anorm * 1e-9 * (1.0 + attempt as f64),
                    anorm * 1e-9 * attempt as f64,
                );
            let mut v: Vec<Complex64> = (0..n)
                .map(|i| {
                    let x = ((i * 2654435761 + 12345) % 1000) as f64 / 1000.0 - 0.5;
                    Complex64::new(1.0 + x, 0.5 - x)
                })
                .collect();
            for _ in 0..3 {
                let mut lu: Vec<Complex64> = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        let mut e = Complex64::new(a[(i, j)], 0.0);
                        if i == j {
                            e -= shift;
                        }
                        lu.push(e);
                    }
                }
                if complex_lu_solve(&mut lu, n, &mut v).is_err() {
                    break;
                }
                let norm = v.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
                if norm == 0.0 || !norm.is_finite() {
                    break;
                }
                for z in v.iter_mut() {
                    *z /= norm;
                }
            }
            // residual ‖Av − λv‖∞ / ‖A‖∞
            let mut res = 0.0f64;
            for i in 0..n {
                let mut av = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    av += a[(i, j)] * v[j];
                }
                res = res.max((av - lambda * v[i]).norm());
            }
            best = best.min(res);
            if best <= 1e-8 * anorm {
                break;
            }
        }
        if best > 1e-8 * anorm {
            return Err(Error::Eigensolver(format!(
                "eigenvector residual {best:.3e} exceeds 1e-8·‖A‖ = {:.3e} for λ = {lambda}",
                1e-8 * anorm
            )));
        }
    }
    Ok(())
}

/// Real eigenvector for a real eigenvalue by shifted inverse iteration.
pub fn real_eigenvector(a: &Matrix, mu: f64) -> Result<Vec<f64>> {
    let n = a.rows();
    let anorm = a.norm_inf().max(1.0);
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + ((i * 2654435761 + 777) % 1000) as f64 / 1000.0)
        .collect();
    let mut last_err = None;
    for attempt in 0..4 {
        let shift = mu + anorm * 1e-9 * (1.0 + attempt as f64);
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] -= shift;
        }
        match crate::solver::LuFactors::factor(shifted) {
            Ok(lu) => {
                for _ in 0..3 {
                    v = lu.solve(&v);
                    let norm = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                    if norm == 0.0 || !norm.is_finite() {
                        break;
                    }
                    for x in v.iter_mut() {
                        *x /= norm;
                    }
                }
                return Ok(v);
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Eigensolver("inverse iteration failed".into())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sorted_by_modulus(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| {
            b.norm()
                .total_cmp(&a.norm())
                .then(b.im.total_cmp(&a.im))
        });
        v
    }

    #[test]
    fn diagonal_matrix() {
        let mut a = Matrix::zeros(3, 3);
        a[(0, 0)] = 3.0;
        a[(1, 1)] = -1.0;
        a[(2, 2)] = 0.5;
        let eigs = sorted_by_modulus(eigenvalues(&a).unwrap());
        let expect = [3.0, -1.0, 0.5];
        for (e, x) in eigs.iter().zip(expect) {
            assert!((e.re - x).abs() < 1e-12 && e.im.abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_matrix_conjugate_pair() {
        let mut a = Matrix::zeros(2, 2);
        a[(0, 1)] = -1.0;
        a[(1, 0)] = 1.0;
        let eigs = sorted_by_modulus(eigenvalues(&a).unwrap());
        assert!((eigs[0] - Complex64::new(0.0, 1.0)).norm() < 1e-12);
        assert!((eigs[1] - Complex64::new(0.0, -1.0)).norm() < 1e-12);
    }

    /// Characteristic polynomial coefficients by the Faddeev–LeVerrier
    /// recurrence (trace based, no eigenvalue computation involved).
    fn char_poly(a: &Matrix) -> Vec<f64> {
        let n = a.rows();
        let mut coeffs = vec![1.0];
        let mut m = Matrix::zeros(n, n);
        let mut c = 1.0;
        for k in 1..=n {
            // M ← A·(M + c·I)
            let mut am = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        let mlj = m[(l, j)] + if l == j { c } else { 0.0 };
                        s += a[(i, l)] * mlj;
                    }
                    am[(i, j)] = s;
                }
            }
            m = am;
            let tr: f64 = (0..n).map(|i| m[(i, i)]).sum();
            c = -tr / k as f64;
            coeffs.push(c);
        }
        coeffs
    }

    /// Durand–Kerner simultaneous root iteration on a monic polynomial.
    fn poly_roots(coeffs: &[f64]) -> Vec<Complex64> {
        let n = coeffs.len() - 1;
        let eval = |z: Complex64| {
            coeffs
                .iter()
                .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
        };
        let radius = 1.0
            + coeffs[1..]
                .iter()
                .map(|c| c.abs())
                .fold(0.0f64, f64::max);
        let mut roots: Vec<Complex64> = (0..n)
            .map(|k| {
                let ang = 2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.4;
                Complex64::from_polar(0.5 * radius, ang)
            })
            .collect();
        for _ in 0..500 {
            let mut delta = 0.0f64;
            for i in 0..n {
                let mut denom = Complex64::new(1.0, 0.0);
                for j in 0..n {
                    if j != i {
                        denom *= roots[i] - roots[j];
                    }
                }
                let step = eval(roots[i]) / denom;
                roots[i] -= step;
                delta = delta.max(step.norm());
            }
            if delta < 1e-13 {
                break;
            }
        }
        roots
    }

    fn greedy_match_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
        let mut used = vec![false; b.len()];
        let mut worst = 0.0f64;
        for &x in a {
            let mut best = f64::INFINITY;
            let mut bi = 0;
            for (i, &y) in b.iter().enumerate() {
                if !used[i] {
                    let d = (x - y).norm();
                    if d < best {
                        best = d;
                        bi = i;
                    }
                }
            }
            used[bi] = true;
            worst = worst.max(best);
        }
        worst
    }

    #[test]
    fn random_matrix_matches_characteristic_polynomial_roots() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..3 {
            let n = 20;
            let mut a = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] = rng.gen_range(-1.0..1.0);
                }
            }
            let eigs = eigenvalues(&a).unwrap();
            let roots = poly_roots(&char_poly(&a));
            let dist = greedy_match_distance(&eigs, &roots);
            assert!(dist <= 1e-6, "mismatch {dist:.2e}");
        }
    }

    #[test]
    fn similarity_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20;
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
        // random well-conditioned similarity: identity plus a mild offset
        let mut p = Matrix::identity(n);
        for i in 0..n {
            for j in 0..n {
                p[(i, j)] += rng.gen_range(-0.1..0.1);
            }
        }
        // compute P·A·P⁻¹ column by column
        let pl = crate::solver::LuFactors::factor(p.clone()).unwrap();
        let mut pap = Matrix::zeros(n, n);
        for j in 0..n {
            // y = A·(P⁻¹ e_j) — build P⁻¹ e_j first
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let pinv_e = pl.solve(&e);
            let ax = a.mul_vec(&pinv_e);
            let pax = p.mul_vec(&ax);
            for i in 0..n {
                pap[(i, j)] = pax[i];
            }
        }
        let ea = eigenvalues(&a).unwrap();
        let eb = eigenvalues(&pap).unwrap();
        let dist = greedy_match_distance(&ea, &eb);
        assert!(dist <= 1e-7, "similarity mismatch {dist:.2e}");
    }

    #[test]
    fn conjugate_pairs_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 15;
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
        let eigs = eigenvalues(&a).unwrap();
        let mut claimed: Vec<Complex64> = eigs.iter().filter(|e| e.im != 0.0).copied().collect();
        while let Some(e) = claimed.pop() {
            let pos = claimed
                .iter()
                .position(|f| (f.conj() - e).norm() <= 1e-9)
                .expect("conjugate partner");
            claimed.remove(pos);
        }
    }

    #[test]
    fn real_eigenvector_recovers_direction() {
        let mut a = Matrix::zeros(3, 3);
        a[(0, 0)] = 2.0;
        a[(1, 1)] = -1.0;
        a[(2, 2)] = 0.5;
        a[(0, 1)] = 0.3;
        let v = real_eigenvector(&a, 2.0).unwrap();
        let av = a.mul_vec(&v);
        for i in 0..3 {
            assert!((av[i] - 2.0 * v[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn companion_matrix_roots() {
        // x³ − 6x² + 11x − 6 = (x−1)(x−2)(x−3), companion form
        let mut a = Matrix::zeros(3, 3);
        a[(0, 0)] = 6.0;
        a[(0, 1)] = -11.0;
        a[(0, 2)] = 6.0;
        a[(1, 0)] = 1.0;
        a[(2, 1)] = 1.0;
        let eigs = sorted_by_modulus(eigenvalues(&a).unwrap());
        let expect = [3.0, 2.0, 1.0];
        for (e, x) in eigs.iter().zip(expect) {
            assert!((e.re - x).abs() < 1e-10 && e.im.abs() < 1e-12, "{e}");
        }
    }
}
