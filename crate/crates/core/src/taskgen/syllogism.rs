//! Euler-diagram syllogism generation.
//!
//! A task shows two premise diagrams over a chain of sets. Premise 1 draws
//! contours X1..Xn, premise 2 draws Xn,Y2..Yn (sharing Xn); candidate
//! conclusions are the five basic set relations between X1 and Yn, each
//! labeled valid when it is consistent with the premises. Consistency comes
//! from the composition of R(X1, Xn) and R(Xn, Yn); contours are drawn as
//! circle outlines whose gray intensity identifies the set across panels.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// The five basic set relations (RCC5).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SetRelation {
    /// Disjoint.
    Disjoint = 0,
    /// Partial overlap: common part plus private parts on both sides.
    Overlap = 1,
    /// A is a proper part of B.
    ProperPart = 2,
    /// B is a proper part of A.
    ProperPartInv = 3,
    /// Equal.
    Equal = 4,
}

pub const SET_RELATIONS: [SetRelation; 5] = [
    SetRelation::Disjoint,
    SetRelation::Overlap,
    SetRelation::ProperPart,
    SetRelation::ProperPartInv,
    SetRelation::Equal,
];

impl SetRelation {
    pub fn from_code(code: u8) -> Option<SetRelation> {
        SET_RELATIONS.get(code as usize).copied()
    }
}

/// Set-relation composition: given A r1 B and B r2 C, the relations between
/// A and C that are realizable. This is the label oracle; the test suite
/// re-derives every cell by enumerating finite set models.
pub fn compose(r1: SetRelation, r2: SetRelation) -> &'static [SetRelation] {
    use SetRelation::*;
    const ALL: [SetRelation; 5] = SET_RELATIONS;
    match (r1, r2) {
        (Equal, _) => match r2 {
            Disjoint => &[Disjoint],
            Overlap => &[Overlap],
            ProperPart => &[ProperPart],
            ProperPartInv => &[ProperPartInv],
            Equal => &[Equal],
        },
        (_, Equal) => match r1 {
            Disjoint => &[Disjoint],
            Overlap => &[Overlap],
            ProperPart => &[ProperPart],
            ProperPartInv => &[ProperPartInv],
            Equal => &[Equal],
        },
        (Disjoint, Disjoint) => &ALL,
        (Disjoint, Overlap) => &[Disjoint, Overlap, ProperPart],
        (Disjoint, ProperPart) => &[Disjoint, Overlap, ProperPart],
        (Disjoint, ProperPartInv) => &[Disjoint],
        (Overlap, Disjoint) => &[Disjoint, Overlap, ProperPartInv],
        (Overlap, Overlap) => &ALL,
        (Overlap, ProperPart) => &[Overlap, ProperPart],
        (Overlap, ProperPartInv) => &[Disjoint, Overlap, ProperPartInv],
        (ProperPart, Disjoint) => &[Disjoint],
        (ProperPart, Overlap) => &[Disjoint, Overlap, ProperPart],
        (ProperPart, ProperPart) => &[ProperPart],
        (ProperPart, ProperPartInv) => &ALL,
        (ProperPartInv, Disjoint) => &[Disjoint, Overlap, ProperPartInv],
        (ProperPartInv, Overlap) => &[Overlap, ProperPartInv],
        (ProperPartInv, ProperPart) => &[Overlap, ProperPart, ProperPartInv, Equal],
        (ProperPartInv, ProperPartInv) => &[ProperPartInv],
    }
}

/// One syllogism task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyllogismInstance {
    /// Two premise rasters.
    pub premises: [Vec<u8>; 2],
    /// Rendered candidate conclusions, one per entry of [`SET_RELATIONS`].
    pub conclusions: Vec<Vec<u8>>,
    /// Validity (consistency with the premises) per candidate conclusion.
    pub labels: [bool; 5],
    /// R(X1, Xn) and R(Xn, Yn) as drawn.
    pub premise_relations: (SetRelation, SetRelation),
    pub n_contours: u8,
    pub side: u16,
}

#[derive(Debug, Clone, Copy)]
struct Circle {
    cx: f64,
    cy: f64,
    r: f64,
    gray: u8,
}

/// Contour intensities by chain role: X1, middles..., shared Xn, middles...,
/// Yn. Distinct so the network can identify sets across panels.
fn role_gray(role: usize) -> u8 {
    [0u8, 110, 180, 70, 140][role % 5]
}

fn draw_ring(canvas: &mut [u8], side: usize, c: &Circle) {
    let thick = (side as f64 / 40.0).max(1.4);
    let lo_y = ((c.cy - c.r - thick).floor().max(0.0)) as usize;
    let hi_y = ((c.cy + c.r + thick).ceil() as usize).min(side - 1);
    let lo_x = ((c.cx - c.r - thick).floor().max(0.0)) as usize;
    let hi_x = ((c.cx + c.r + thick).ceil() as usize).min(side - 1);
    for y in lo_y..=hi_y {
        for x in lo_x..=hi_x {
            let d = ((x as f64 + 0.5 - c.cx).powi(2) + (y as f64 + 0.5 - c.cy).powi(2)).sqrt();
            if (d - c.r).abs() <= thick {
                canvas[y * side + x] = c.gray;
            }
        }
    }
}

fn render_circles(circles: &[Circle], side: u16) -> Vec<u8> {
    let side = side as usize;
    let mut canvas = vec![255u8; side * side];
    for c in circles {
        draw_ring(&mut canvas, side, c);
    }
    canvas
}

/// Place two circles realizing `rel` inside a unit square with margins,
/// then scale to pixels. Returns (first, second).
fn place_pair(
    rel: SetRelation,
    g1: u8,
    g2: u8,
    side: f64,
    rng: &mut ChaCha8Rng,
) -> (Circle, Circle) {
    let s = side;
    let margin = 0.08 * s;
    match rel {
        SetRelation::Disjoint => {
            let r1 = rng.random_range(0.10..0.16) * s;
            let r2 = rng.random_range(0.10..0.16) * s;
            let cy1 = rng.random_range(margin + r1..s - margin - r1);
            let cy2 = rng.random_range(margin + r2..s - margin - r2);
            let cx1 = margin + r1 + rng.random_range(0.0..0.04 * s);
            let cx2 = s - margin - r2 - rng.random_range(0.0..0.04 * s);
            (
                Circle { cx: cx1, cy: cy1, r: r1, gray: g1 },
                Circle { cx: cx2, cy: cy2, r: r2, gray: g2 },
            )
        }
        SetRelation::Overlap => {
            let r1 = rng.random_range(0.16..0.22) * s;
            let r2 = rng.random_range(0.16..0.22) * s;
            let cy = s / 2.0 + rng.random_range(-0.08..0.08) * s;
            let gap = rng.random_range(0.55..0.80) * (r1 + r2);
            let cx1 = s / 2.0 - gap / 2.0;
            let cx2 = s / 2.0 + gap / 2.0;
            (
                Circle { cx: cx1, cy, r: r1, gray: g1 },
                Circle { cx: cx2, cy, r: r2, gray: g2 },
            )
        }
        SetRelation::ProperPart | SetRelation::ProperPartInv => {
            let router = rng.random_range(0.30..0.38) * s;
            let rinner = rng.random_range(0.35..0.55) * router;
            let cx = s / 2.0 + rng.random_range(-0.05..0.05) * s;
            let cy = s / 2.0 + rng.random_range(-0.05..0.05) * s;
            let off = rng.random_range(0.0..0.8) * (router - rinner - 0.02 * s);
            let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let inner = Circle {
                cx: cx + off * ang.cos(),
                cy: cy + off * ang.sin(),
                r: rinner,
                gray: 0,
            };
            let outer = Circle { cx, cy, r: router, gray: 0 };
            match rel {
                SetRelation::ProperPart => (
                    Circle { gray: g1, ..inner },
                    Circle { gray: g2, ..outer },
                ),
                _ => (
                    Circle { gray: g1, ..outer },
                    Circle { gray: g2, ..inner },
                ),
            }
        }
        SetRelation::Equal => {
            // Same region: concentric rings, radii offset for visibility.
            let r = rng.random_range(0.26..0.34) * s;
            let cx = s / 2.0;
            let cy = s / 2.0;
            (
                Circle { cx, cy, r, gray: g1 },
                Circle { cx, cy, r: r - 0.035 * s, gray: g2 },
            )
        }
    }
}

/// Extra middle contours placed clear of the panel's informative pair.
fn filler_circles(n: usize, roles: &[usize], side: f64, rng: &mut ChaCha8Rng) -> Vec<Circle> {
    (0..n)
        .map(|i| {
            let r = rng.random_range(0.06..0.10) * side;
            Circle {
                cx: rng.random_range(r + 0.02 * side..side - r - 0.02 * side),
                cy: if rng.random_range(0..2) == 0 {
                    r + 0.02 * side
                } else {
                    side - r - 0.02 * side
                },
                r,
                gray: role_gray(roles[i]),
            }
        })
        .collect()
}

/// Sample one syllogism task with n contours per premise panel.
pub fn sample_syllogism(
    side: u16,
    n_contours: u8,
    rng: &mut ChaCha8Rng,
) -> Result<SyllogismInstance> {
    if !(2..=3).contains(&n_contours) {
        return Err(Error::Config(format!(
            "syllogism panels support 2 or 3 contours, got {n_contours}"
        )));
    }
    // Premise relations avoid Equal, which has no unambiguous rendering.
    let premise_pool = [
        SetRelation::Disjoint,
        SetRelation::Overlap,
        SetRelation::ProperPart,
        SetRelation::ProperPartInv,
    ];
    let r1 = *premise_pool.choose(rng).unwrap();
    let r2 = *premise_pool.choose(rng).unwrap();

    let sf = side as f64;
    // Premise 1: X1 (role 0) .. Xn (role 2 = shared).
    let (c1a, c1b) = place_pair(r1, role_gray(0), role_gray(2), sf, rng);
    let mut p1 = vec![c1a, c1b];
    if n_contours == 3 {
        p1.extend(filler_circles(1, &[1], sf, rng));
    }
    // Premise 2: Xn (role 2) .. Yn (role 4).
    let (c2a, c2b) = place_pair(r2, role_gray(2), role_gray(4), sf, rng);
    let mut p2 = vec![c2a, c2b];
    if n_contours == 3 {
        p2.extend(filler_circles(1, &[3], sf, rng));
    }

    let consistent = compose(r1, r2);
    let mut labels = [false; 5];
    let mut conclusions = Vec::with_capacity(5);
    for (i, &rel) in SET_RELATIONS.iter().enumerate() {
        labels[i] = consistent.contains(&rel);
        let (ca, cb) = place_pair(rel, role_gray(0), role_gray(4), sf, rng);
        conclusions.push(render_circles(&[ca, cb], side));
    }

    Ok(SyllogismInstance {
        premises: [render_circles(&p1, side), render_circles(&p2, side)],
        conclusions,
        labels,
        premise_relations: (r1, r2),
        n_contours,
        side,
    })
}

#[cfg(test)]
mod tests {
    use rand_chacha::rand_core::SeedableRng;

    use super::*;

    /// Finite-model oracle: which relations between A and C are realizable
    /// over subsets of a small universe, given R1(A, B) and R2(B, C)?
    mod model_oracle {
        use super::SetRelation;

        fn rel_of(a: u32, b: u32) -> Option<SetRelation> {
            if a == 0 || b == 0 {
                return None;
            }
            Some(if a == b {
                SetRelation::Equal
            } else if a & b == 0 {
                SetRelation::Disjoint
            } else if a & b == a {
                SetRelation::ProperPart
            } else if a & b == b {
                SetRelation::ProperPartInv
            } else {
                SetRelation::Overlap
            })
        }

        pub fn compose(r1: SetRelation, r2: SetRelation) -> Vec<SetRelation> {
            let universe = 6u32;
            let full = 1u32 << universe;
            let mut out = Vec::new();
            for a in 1..full {
                for b in 1..full {
                    if rel_of(a, b) != Some(r1) {
                        continue;
                    }
                    for c in 1..full {
                        if rel_of(b, c) != Some(r2) {
                            continue;
                        }
                        let r = rel_of(a, c).unwrap();
                        if !out.contains(&r) {
                            out.push(r);
                        }
                    }
                }
            }
            out
        }
    }

    #[test]
    fn composition_table_matches_finite_model_enumeration() {
        for &r1 in &SET_RELATIONS {
            for &r2 in &SET_RELATIONS {
                let mut table: Vec<SetRelation> = compose(r1, r2).to_vec();
                let mut oracle = model_oracle::compose(r1, r2);
                table.sort_by_key(|r| *r as u8);
                oracle.sort_by_key(|r| *r as u8);
                assert_eq!(table, oracle, "compose({r1:?}, {r2:?})");
            }
        }
    }

    #[test]
    fn subset_chain_is_transitive() {
        // A in B, B in C: "A in C" is the only consistent conclusion.
        let c = compose(SetRelation::ProperPart, SetRelation::ProperPart);
        assert_eq!(c, &[SetRelation::ProperPart]);
    }

    #[test]
    fn disjoint_then_contains_refutes_subset() {
        // A disjoint B, C in B (i.e. B contains C): A in C is inconsistent.
        let c = compose(SetRelation::Disjoint, SetRelation::ProperPartInv);
        assert!(!c.contains(&SetRelation::ProperPart));
        assert_eq!(c, &[SetRelation::Disjoint]);
    }

    #[test]
    fn labels_agree_with_oracle_for_sampled_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [2u8, 3] {
            for _ in 0..40 {
                let inst = sample_syllogism(48, n, &mut rng).unwrap();
                let consistent = compose(inst.premise_relations.0, inst.premise_relations.1);
                for (i, &rel) in SET_RELATIONS.iter().enumerate() {
                    assert_eq!(inst.labels[i], consistent.contains(&rel));
                }
            }
        }
    }

    #[test]
    fn both_contour_counts_are_generable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = sample_syllogism(64, 2, &mut rng).unwrap();
        let b = sample_syllogism(64, 3, &mut rng).unwrap();
        assert_eq!(a.n_contours, 2);
        assert_eq!(b.n_contours, 3);
        assert_eq!(a.premises[0].len(), 64 * 64);
        assert!(sample_syllogism(64, 4, &mut rng).is_err());
    }
}
