//! Relation semantics over symbolic panel specs and the pure candidate
//! verifier.
//!
//! Semantics per relation (applied to the ordered triple of a row/column):
//! - Constant: all three attribute values equal.
//! - Progression: the scalar index increases by a constant step in {1, 2}.
//! - And / Or / Xor: the third panel's value set equals the set operation of
//!   the first two (position cell masks, line-pattern masks).
//! - Arithmetic: value3 = value1 + value2 or value1 - value2 (numeric).
//! - ConsistentUnion: the same 3-value set appears in every row/column of
//!   the matrix, order free.

use super::{
    orientation_triples, AttributeKind, ObjectKind, PanelSpec, RelationSpec,
    RelationType,
};

/// Attribute value of one panel, as seen by a relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttrValue {
    /// Scalar spectrum index (type, size, color, number).
    Index(i32),
    /// Occupied placement cells.
    CellSet(u16),
    /// Present line patterns.
    LineMask(u8),
}

/// Panel-level attribute value, or None when undefined (heterogeneous
/// shapes for a scalar attribute, no lines for line color, ...).
pub fn panel_attr(panel: &PanelSpec, object: ObjectKind, attribute: AttributeKind) -> Option<AttrValue> {
    match (object, attribute) {
        (ObjectKind::Shape, AttributeKind::Position) => Some(AttrValue::CellSet(panel.cell_mask())),
        (ObjectKind::Shape, AttributeKind::Number) => {
            Some(AttrValue::Index(panel.shapes.len() as i32))
        }
        (ObjectKind::Shape, attr) => {
            let mut vals = panel.shapes.iter().map(|s| match attr {
                AttributeKind::Type => s.shape_type as i32,
                AttributeKind::Size => s.size as i32,
                AttributeKind::Color => s.color as i32,
                _ => unreachable!(),
            });
            let first = vals.next()?;
            if vals.all(|v| v == first) {
                Some(AttrValue::Index(first))
            } else {
                None
            }
        }
        (ObjectKind::Line, AttributeKind::Type) => Some(AttrValue::LineMask(panel.line_mask())),
        (ObjectKind::Line, AttributeKind::Color) => {
            let mut vals = panel.lines.iter().flatten();
            let first = *vals.next()?;
            if vals.all(|&v| v == first) {
                Some(AttrValue::Index(first as i32))
            } else {
                None
            }
        }
        (ObjectKind::Line, _) => None,
    }
}

/// Whether an ordered value triple satisfies a (non-ConsistentUnion)
/// relation.
fn triple_holds(relation: RelationType, v: [Option<AttrValue>; 3]) -> bool {
    let [a, b, c] = v;
    match relation {
        RelationType::Constant => match (a, b, c) {
            (Some(x), Some(y), Some(z)) => x == y && y == z,
            _ => false,
        },
        RelationType::Progression => match (a, b, c) {
            (Some(AttrValue::Index(x)), Some(AttrValue::Index(y)), Some(AttrValue::Index(z))) => {
                let d = y - x;
                (d == 1 || d == 2) && z - y == d
            }
            _ => false,
        },
        RelationType::Arithmetic => match (a, b, c) {
            (Some(AttrValue::Index(x)), Some(AttrValue::Index(y)), Some(AttrValue::Index(z))) => {
                z == x + y || z == x - y
            }
            _ => false,
        },
        RelationType::And | RelationType::Or | RelationType::Xor => {
            let bits = |v: Option<AttrValue>| -> Option<u16> {
                match v {
                    Some(AttrValue::CellSet(m)) => Some(m),
                    Some(AttrValue::LineMask(m)) => Some(u16::from(m)),
                    _ => None,
                }
            };
            match (bits(a), bits(b), bits(c)) {
                (Some(x), Some(y), Some(z)) => {
                    z == match relation {
                        RelationType::And => x & y,
                        RelationType::Or => x | y,
                        _ => x ^ y,
                    }
                }
                _ => false,
            }
        }
        RelationType::ConsistentUnion => unreachable!("checked at grid level"),
    }
}

/// Whether a relation holds across the full 9-panel grid along its
/// orientation.
pub fn relation_holds(grid: &[&PanelSpec; 9], rel: &RelationSpec) -> bool {
    let triples = orientation_triples(rel.orientation);
    if rel.relation == RelationType::ConsistentUnion {
        // Every line must carry the same 3-value multiset.
        let mut reference: Option<Vec<AttrValue>> = None;
        for t in &triples {
            let mut vals = Vec::with_capacity(3);
            for &p in t {
                match panel_attr(grid[p], rel.object, rel.attribute) {
                    Some(v) => vals.push(v),
                    None => return false,
                }
            }
            vals.sort_unstable();
            match &reference {
                Some(r) if *r != vals => return false,
                Some(_) => {}
                None => reference = Some(vals),
            }
        }
        true
    } else {
        triples.iter().all(|t| {
            triple_holds(
                rel.relation,
                [
                    panel_attr(grid[t[0]], rel.object, rel.attribute),
                    panel_attr(grid[t[1]], rel.object, rel.attribute),
                    panel_attr(grid[t[2]], rel.object, rel.attribute),
                ],
            )
        })
    }
}

/// True iff filling the blank position with `candidate` satisfies every
/// relation. Pure function of the symbolic specs.
pub fn verify_candidate(context: &[PanelSpec], candidate: &PanelSpec, relations: &[RelationSpec]) -> bool {
    assert_eq!(context.len(), 8, "context must hold 8 panels");
    let grid: [&PanelSpec; 9] = [
        &context[0],
        &context[1],
        &context[2],
        &context[3],
        &context[4],
        &context[5],
        &context[6],
        &context[7],
        candidate,
    ];
    relations.iter().all(|r| relation_holds(&grid, r))
}

#[cfg(test)]
mod tests {
    use super::super::{Orientation, ShapeSpec, ShapeType};
    use super::*;

    fn panel_with_sizes(size: u8) -> PanelSpec {
        PanelSpec {
            shapes: vec![ShapeSpec {
                shape_type: ShapeType::Square,
                size,
                color: 3,
                cell: 4,
            }],
            lines: Default::default(),
        }
    }

    /// Hand-built progression-of-size row: direct rule evaluation.
    #[test]
    fn progression_of_size_row() {
        let rel = RelationSpec {
            relation: RelationType::Progression,
            object: ObjectKind::Shape,
            attribute: AttributeKind::Size,
            orientation: Orientation::Rows,
        };
        // All three rows 0,1,2; candidate completes the third row.
        let context: Vec<PanelSpec> = [0u8, 1, 2, 0, 1, 2, 0, 1]
            .iter()
            .map(|&s| panel_with_sizes(s))
            .collect();
        assert!(verify_candidate(&context, &panel_with_sizes(2), &[rel]));
        assert!(!verify_candidate(&context, &panel_with_sizes(1), &[rel]));
    }

    #[test]
    fn xor_position_semantics() {
        let rel = RelationSpec {
            relation: RelationType::Xor,
            object: ObjectKind::Shape,
            attribute: AttributeKind::Position,
            orientation: Orientation::Rows,
        };
        let by_cells = |cells: &[u8]| PanelSpec {
            shapes: cells
                .iter()
                .map(|&c| ShapeSpec { shape_type: ShapeType::Circle, size: 2, color: 2, cell: c })
                .collect(),
            lines: Default::default(),
        };
        // Row pattern: {0,1} xor {1,2} = {0,2}
        let context = vec![
            by_cells(&[0, 1]),
            by_cells(&[1, 2]),
            by_cells(&[0, 2]),
            by_cells(&[3, 4]),
            by_cells(&[4, 5]),
            by_cells(&[3, 5]),
            by_cells(&[6, 7]),
            by_cells(&[7, 8]),
        ];
        assert!(verify_candidate(&context, &by_cells(&[6, 8]), &[rel]));
        assert!(!verify_candidate(&context, &by_cells(&[6, 7]), &[rel]));
    }

    #[test]
    fn heterogeneous_panel_has_no_scalar_attribute() {
        let p = PanelSpec {
            shapes: vec![
                ShapeSpec { shape_type: ShapeType::Circle, size: 1, color: 0, cell: 0 },
                ShapeSpec { shape_type: ShapeType::Star, size: 1, color: 0, cell: 1 },
            ],
            lines: Default::default(),
        };
        assert_eq!(panel_attr(&p, ObjectKind::Shape, AttributeKind::Type), None);
        assert_eq!(
            panel_attr(&p, ObjectKind::Shape, AttributeKind::Size),
            Some(AttrValue::Index(1))
        );
        assert_eq!(
            panel_attr(&p, ObjectKind::Shape, AttributeKind::Number),
            Some(AttrValue::Index(2))
        );
    }

    #[test]
    fn consistent_union_checks_whole_grid() {
        let rel = RelationSpec {
            relation: RelationType::ConsistentUnion,
            object: ObjectKind::Shape,
            attribute: AttributeKind::Size,
            orientation: Orientation::Rows,
        };
        // Every row is a permutation of sizes {1, 3, 5}.
        let rows = [[1u8, 3, 5], [5, 1, 3], [3, 5, 1]];
        let mut panels: Vec<PanelSpec> = Vec::new();
        for row in rows {
            for s in row {
                panels.push(panel_with_sizes(s));
            }
        }
        let candidate = panels.pop().unwrap();
        assert!(verify_candidate(&panels, &candidate, &[rel]));
        assert!(!verify_candidate(&panels, &panel_with_sizes(3), &[rel]));
    }
}
