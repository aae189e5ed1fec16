//! Meta-target encoding: one bit per (relation, object, attribute) tuple in
//! a configured vocabulary (orientation is not part of the encoding).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{AttributeKind, ObjectKind, RelationSpec, RelationTuple, RelationType, LEGAL_TUPLES};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaVocabulary {
    tuples: Vec<RelationTuple>,
}

impl MetaVocabulary {
    pub fn custom(tuples: Vec<RelationTuple>) -> Self {
        MetaVocabulary { tuples }
    }

    /// 12-entry vocabulary compatible in width with the PGM-style
    /// meta-target. The exact tuple list is a documented configuration of
    /// this generator, not a claim about the published dataset's ordering.
    pub fn pgm12() -> Self {
        use AttributeKind::*;
        use ObjectKind::*;
        use RelationType::*;
        MetaVocabulary {
            tuples: vec![
                (Progression, Shape, Size),
                (Progression, Shape, Color),
                (Progression, Shape, Number),
                (Xor, Shape, Position),
                (Or, Shape, Position),
                (And, Shape, Position),
                (ConsistentUnion, Shape, Type),
                (ConsistentUnion, Shape, Color),
                (Progression, Line, Color),
                (Xor, Line, Type),
                (Or, Line, Type),
                (And, Line, Type),
            ],
        }
    }

    /// 9-entry vocabulary for RAVEN-style tasks (rows only, no logical
    /// position relations).
    pub fn raven9() -> Self {
        use AttributeKind::*;
        use ObjectKind::*;
        use RelationType::*;
        MetaVocabulary {
            tuples: vec![
                (Constant, Shape, Type),
                (Constant, Shape, Size),
                (Constant, Shape, Color),
                (Progression, Shape, Size),
                (Progression, Shape, Color),
                (Progression, Shape, Number),
                (Arithmetic, Shape, Number),
                (ConsistentUnion, Shape, Type),
                (ConsistentUnion, Shape, Size),
            ],
        }
    }

    /// Every legal tuple.
    pub fn full() -> Self {
        MetaVocabulary { tuples: LEGAL_TUPLES.to_vec() }
    }

    pub fn width(&self) -> usize {
        self.tuples.len()
    }

    pub fn tuples(&self) -> &[RelationTuple] {
        &self.tuples
    }

    pub fn contains(&self, t: &RelationTuple) -> bool {
        self.tuples.contains(t)
    }

    /// Multi-hot encoding of the relation set. Unknown tuples are a
    /// configuration error.
    pub fn encode(&self, relations: &[RelationSpec]) -> Result<Vec<bool>> {
        let mut bits = vec![false; self.tuples.len()];
        for r in relations {
            let t = (r.relation, r.object, r.attribute);
            let idx = self
                .tuples
                .iter()
                .position(|v| *v == t)
                .ok_or_else(|| Error::Config(format!("tuple {t:?} not in meta vocabulary")))?;
            bits[idx] = true;
        }
        Ok(bits)
    }

    /// Set of tuples present in a bitvector.
    pub fn decode(&self, bits: &[bool]) -> Vec<RelationTuple> {
        self.tuples
            .iter()
            .zip(bits)
            .filter_map(|(t, &b)| if b { Some(*t) } else { None })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::Orientation;
    use super::*;

    fn spec(t: RelationTuple) -> RelationSpec {
        RelationSpec { relation: t.0, object: t.1, attribute: t.2, orientation: Orientation::Rows }
    }

    #[test]
    fn single_tuple_sets_exactly_one_bit() {
        let v = MetaVocabulary::pgm12();
        let bits = v
            .encode(&[spec((RelationType::Xor, ObjectKind::Shape, AttributeKind::Position))])
            .unwrap();
        assert_eq!(bits.iter().filter(|&&b| b).count(), 1);
        assert_eq!(v.width(), 12);
    }

    #[test]
    fn empty_set_encodes_to_zero_vector() {
        let v = MetaVocabulary::raven9();
        assert_eq!(v.width(), 9);
        assert!(v.encode(&[]).unwrap().iter().all(|&b| !b));
    }

    #[test]
    fn two_tuples_round_trip() {
        let v = MetaVocabulary::pgm12();
        let a = (RelationType::Progression, ObjectKind::Shape, AttributeKind::Size);
        let b = (RelationType::Or, ObjectKind::Line, AttributeKind::Type);
        let bits = v.encode(&[spec(a), spec(b)]).unwrap();
        assert_eq!(bits.iter().filter(|&&x| x).count(), 2);
        let decoded = v.decode(&bits);
        assert!(decoded.contains(&a) && decoded.contains(&b) && decoded.len() == 2);
    }

    #[test]
    fn unknown_tuple_is_config_error() {
        let v = MetaVocabulary::raven9();
        let err = v
            .encode(&[spec((RelationType::Xor, ObjectKind::Line, AttributeKind::Type))])
            .unwrap_err();
        assert!(err.to_string().starts_with("config"));
    }
}
