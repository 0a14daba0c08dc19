//! Angular distance between voiceprints.
//!
//! `d(x, x') = arccos(cos(x, x')) / pi`, a metric on directions with range
//! `[0, 1]`. The arccos form loses about half the significant digits near
//! 0 and 1 (its derivative blows up there), so distances are evaluated with
//! the equivalent half-angle form `2 atan2(|u - v|, |u + v|) / pi` on unit
//! vectors, which stays accurate across the whole range.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use crate::embedding::{unit_vector, Voiceprint, VoiceprintDatabase};
use crate::error::{Error, Result};
use crate::text::fmt12;

fn check_pair(x: &Voiceprint, y: &Voiceprint) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
            context: Some(format!("`{}` vs `{}`", x.id(), y.id())),
        });
    }
    Ok(())
}

/// `<x, y> / (|x| |y|)`, clamped into `[-1, 1]`.
pub fn cosine_similarity(x: &Voiceprint, y: &Voiceprint) -> Result<f64> {
    check_pair(x, y)?;
    let dot: f64 = x.vector().iter().zip(y.vector()).map(|(a, b)| a * b).sum();
    let denom = x.norm() * y.norm();
    if denom == 0.0 {
        return Err(Error::ZeroVector(None));
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Angular distance in units of pi radians.
pub fn angular_distance(x: &Voiceprint, y: &Voiceprint) -> Result<f64> {
    check_pair(x, y)?;
    if x.shares_storage(y) || x.bit_identical(y) {
        return Ok(0.0);
    }
    let u = unit_vector(x.vector()).ok_or_else(|| Error::ZeroVector(Some(x.id().into())))?;
    let v = unit_vector(y.vector()).ok_or_else(|| Error::ZeroVector(Some(y.id().into())))?;
    Ok(unit_angular_distance(&u, &v))
}

/// Angular distance between two unit vectors of equal length.
///
/// Symmetric bit-for-bit in its arguments, and exactly 0 for identical
/// inputs.
#[inline]
pub fn unit_angular_distance(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut diff = 0.0;
    let mut sum = 0.0;
    for (a, b) in u.iter().zip(v) {
        let d = a - b;
        let s = a + b;
        diff += d * d;
        sum += s * s;
    }
    let d = 2.0 * diff.sqrt().atan2(sum.sqrt()) / PI;
    d.clamp(0.0, 1.0)
}

/// Distance from an arbitrary (not necessarily unit) query to every record
/// of `db`, in database order.
pub fn distances_to(x: &Voiceprint, db: &VoiceprintDatabase) -> Result<Vec<f64>> {
    if x.dim() != db.dim() {
        return Err(Error::DimensionMismatch {
            expected: db.dim(),
            found: x.dim(),
            context: Some(format!("query `{}`", x.id())),
        });
    }
    let u = unit_vector(x.vector()).ok_or_else(|| Error::ZeroVector(Some(x.id().into())))?;
    Ok(db
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if x.bit_identical(r) {
                0.0
            } else {
                unit_angular_distance(&u, db.unit(i))
            }
        })
        .collect())
}

/// Pairwise angular distances over a database.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    ids: Vec<String>,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.entries[i * n..(i + 1) * n]
    }

    /// CSV with an `id` corner cell, record ids as row and column headers,
    /// and entries at 12 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "id")?;
        for id in &self.ids {
            write!(w, ",{id}")?;
        }
        writeln!(w)?;
        for (i, id) in self.ids.iter().enumerate() {
            write!(w, "{id}")?;
            for d in self.row(i) {
                write!(w, ",{}", fmt12(*d))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// All pairwise distances. Rows are computed in parallel; each entry is a
/// pure function of its two records, so the result does not depend on the
/// thread schedule.
pub fn distance_matrix(db: &VoiceprintDatabase) -> DistanceMatrix {
    let n = db.len();
    let mut entries = vec![0.0; n * n];
    entries.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let xi = db.record(i);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = if i == j || xi.bit_identical(db.record(j)) {
                0.0
            } else {
                unit_angular_distance(db.unit(i), db.unit(j))
            };
        }
    });
    DistanceMatrix {
        ids: db.ids().map(str::to_string).collect(),
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vp(id: &str, v: &[f64]) -> Voiceprint {
        Voiceprint::new(id, v.to_vec()).unwrap()
    }

    // Reference route: the textbook arccos formula.
    fn arccos_distance(x: &[f64], y: &[f64]) -> f64 {
        let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        (dot / (nx * ny)).clamp(-1.0, 1.0).acos() / PI
    }

    #[test]
    fn cosine_examples() {
        let e1 = vp("a", &[1.0, 0.0]);
        assert_eq!(cosine_similarity(&e1, &vp("b", &[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&e1, &vp("c", &[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&e1, &vp("d", &[-1.0, 0.0])).unwrap(), -1.0);
    }

    #[test]
    fn angular_examples() {
        let e1 = vp("a", &[1.0, 0.0]);
        assert_eq!(angular_distance(&e1, &vp("b", &[1.0, 0.0])).unwrap(), 0.0);
        assert_eq!(angular_distance(&e1, &vp("c", &[0.0, 1.0])).unwrap(), 0.5);
        assert_eq!(angular_distance(&e1, &vp("d", &[-1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(angular_distance(&e1, &e1).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = vp("a", &[1.0, 0.0]);
        let b = vp("b", &[1.0, 0.0, 0.0]);
        assert!(matches!(cosine_similarity(&a, &b), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(angular_distance(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn near_parallel_stays_finite_and_small() {
        let a = vp("a", &[1.0, 1e-12]);
        let b = vp("b", &[1.0, 0.0]);
        let d = angular_distance(&a, &b).unwrap();
        assert!(d.is_finite() && d > 0.0 && d < 1e-11, "{d}");
        // arccos loses this entirely: cos rounds to exactly 1.
        assert_eq!(arccos_distance(a.vector(), b.vector()), 0.0);
    }

    #[test]
    fn orthogonal_pair_matrix() {
        let db = VoiceprintDatabase::new(vec![vp("a", &[1.0, 0.0]), vp("b", &[0.0, 1.0])], 2).unwrap();
        let m = distance_matrix(&db);
        assert_eq!(m.row(0), &[0.0, 0.5]);
        assert_eq!(m.row(1), &[0.5, 0.0]);
        let mut csv = Vec::new();
        m.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "id,a,b\na,0,0.5\nb,0.5,0\n");
    }

    #[test]
    fn matrix_matches_scalar_op_on_random_db() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
        let records: Vec<_> = (0..20)
            .map(|i| {
                let v: Vec<f64> = (0..7).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                vp(&format!("r{i}"), &v)
            })
            .collect();
        let db = VoiceprintDatabase::new(records, 7).unwrap();
        let m = distance_matrix(&db);
        for i in 0..20 {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..20 {
                let scalar = angular_distance(db.record(i), db.record(j)).unwrap();
                assert_eq!(m.get(i, j).to_bits(), scalar.to_bits());
                assert_eq!(m.get(i, j), m.get(j, i));
                if i != j {
                    let oracle = arccos_distance(db.record(i).vector(), db.record(j).vector());
                    assert!((m.get(i, j) - oracle).abs() < 1e-12, "{i},{j}");
                }
            }
        }
    }

    fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, dim)
            .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-6))
    }

    proptest! {
        #[test]
        fn agrees_with_arccos_route(x in nonzero_vec(5), y in nonzero_vec(5)) {
            let a = vp("x", &x);
            let b = vp("y", &y);
            let c = cosine_similarity(&a, &b).unwrap();
            // arccos is ill-conditioned near +-1; compare only where it is not.
            prop_assume!(c.abs() < 0.999);
            let d = angular_distance(&a, &b).unwrap();
            prop_assert!((d - c.acos() / PI).abs() < 1e-12);
        }

        #[test]
        fn scale_invariant(x in nonzero_vec(6), y in nonzero_vec(6), a in 1e-3f64..1e3, b in 1e-3f64..1e3) {
            let d0 = angular_distance(&vp("x", &x), &vp("y", &y)).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| v * a).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * b).collect();
            let d1 = angular_distance(&vp("x", &xs), &vp("y", &ys)).unwrap();
            prop_assert!((d0 - d1).abs() <= 1e-12, "{} vs {}", d0, d1);
        }

        #[test]
        fn symmetric_and_bounded(x in nonzero_vec(4), y in nonzero_vec(4)) {
            let a = vp("x", &x);
            let b = vp("y", &y);
            let d = angular_distance(&a, &b).unwrap();
            prop_assert_eq!(d.to_bits(), angular_distance(&b, &a).unwrap().to_bits());
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn triangle_inequality(x in nonzero_vec(3), y in nonzero_vec(3), z in nonzero_vec(3)) {
            let (a, b, c) = (vp("x", &x), vp("y", &y), vp("z", &z));
            let xz = angular_distance(&a, &c).unwrap();
            let xy = angular_distance(&a, &b).unwrap();
            let yz = angular_distance(&b, &c).unwrap();
            prop_assert!(xz <= xy + yz + 1e-9);
        }
    }
}
