//! Constructive task sampling.
//!
//! A task is built attribute-by-attribute: each sampled relation fills the
//! attribute it constrains along its orientation, remaining attributes take
//! default values (constant grid-wide, or per-panel noise when configured).
//! Distractors copy the answer panel and perturb one relation-bearing
//! attribute, then are re-verified to fail; the correct answer is placed at
//! a uniformly random candidate slot.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::relations::verify_candidate;
use super::render::render_panel;
use super::{
    orientation_triples, AttributeKind, GeneratorConfig, ObjectKind, PanelSpec,
    RelationSpec, RelationType, ShapeSpec, TaskInstance, LINE_PATTERNS, SHAPE_TYPES,
};

/// Largest shape count used for number-valued attributes.
const NUMBER_MAX: u8 = 6;
/// Cell-mask popcount range for position-valued attributes.
const POSITION_MAX: u32 = 4;

/// Per-panel attribute assignment for the full 3x3 grid.
#[derive(Debug, Clone)]
struct GridAttrs {
    type_idx: [u8; 9],
    size_idx: [u8; 9],
    color_idx: [u8; 9],
    /// Occupied cells; authoritative when a position relation is bound,
    /// otherwise derived from `count`.
    cells: [u16; 9],
    count: [u8; 9],
    position_bound: bool,
    line_mask: [u8; 9],
    line_color: [u8; 9],
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    items.choose(rng).expect("non-empty slice")
}

fn random_mask(rng: &mut ChaCha8Rng, width: u32, min_pop: u32, max_pop: u32) -> u16 {
    let pop = rng.random_range(min_pop..=max_pop.min(width));
    let mut cells: Vec<u32> = (0..width).collect();
    cells.shuffle(rng);
    cells[..pop as usize].iter().fold(0u16, |m, &c| m | 1 << c)
}

fn random_cells(rng: &mut ChaCha8Rng, count: u8) -> u16 {
    random_mask(rng, 9, count as u32, count as u32)
}

/// All (start, step) pairs with step in {1, 2} whose triple lies inside the
/// allowed value set.
fn progression_triples(allowed: &[u8]) -> Vec<(u8, u8)> {
    let mut out = Vec::new();
    for &start in allowed {
        for step in [1u8, 2] {
            let b = start + step;
            let c = start + 2 * step;
            if allowed.contains(&b) && allowed.contains(&c) {
                out.push((start, step));
            }
        }
    }
    out
}

fn relation_infeasible(rel: &RelationSpec, why: &str) -> Error {
    Error::Generation(format!("infeasible relation {rel:?}: {why}"))
}

/// Fill one scalar shape attribute (values written per panel) along the
/// relation's orientation.
fn fill_scalar(
    rng: &mut ChaCha8Rng,
    rel: &RelationSpec,
    allowed: &[u8],
    values: &mut [u8; 9],
) -> Result<()> {
    let triples = orientation_triples(rel.orientation);
    match rel.relation {
        RelationType::Constant => {
            for t in &triples {
                let v = *pick(rng, allowed);
                for &p in t {
                    values[p] = v;
                }
            }
        }
        RelationType::Progression => {
            let starts = progression_triples(allowed);
            if starts.is_empty() {
                return Err(relation_infeasible(rel, "no progression fits the value set"));
            }
            for t in &triples {
                let &(start, step) = pick(rng, &starts);
                for (i, &p) in t.iter().enumerate() {
                    values[p] = start + step * i as u8;
                }
            }
        }
        RelationType::Arithmetic => {
            // Sign fixed per task; the verifier accepts either sign.
            let plus = rng.random_range(0..2) == 0;
            for t in &triples {
                let (a, b) = loop {
                    let a = rng.random_range(1..=NUMBER_MAX);
                    let b = rng.random_range(1..=NUMBER_MAX);
                    if plus && a + b <= NUMBER_MAX {
                        break (a, b);
                    }
                    if !plus && a > b {
                        break (a, b);
                    }
                };
                values[t[0]] = a;
                values[t[1]] = b;
                values[t[2]] = if plus { a + b } else { a - b };
            }
        }
        RelationType::ConsistentUnion => {
            if allowed.len() < 3 {
                return Err(relation_infeasible(rel, "needs at least 3 distinct values"));
            }
            let mut set = allowed.to_vec();
            set.shuffle(rng);
            let set = &set[..3];
            for t in &triples {
                let mut perm = set.to_vec();
                perm.shuffle(rng);
                for (i, &p) in t.iter().enumerate() {
                    values[p] = perm[i];
                }
            }
        }
        _ => return Err(relation_infeasible(rel, "not a scalar relation")),
    }
    Ok(())
}

/// Fill a set-valued attribute (position cells or line masks).
fn fill_masks(
    rng: &mut ChaCha8Rng,
    rel: &RelationSpec,
    width: u32,
    require_nonempty: bool,
    max_retries: usize,
    values: &mut [u16; 9],
) -> Result<()> {
    let triples = orientation_triples(rel.orientation);
    match rel.relation {
        RelationType::And | RelationType::Or | RelationType::Xor => {
            for t in &triples {
                let mut ok = false;
                for _ in 0..max_retries {
                    let m1 = random_mask(rng, width, 1, POSITION_MAX);
                    let m2 = random_mask(rng, width, 1, POSITION_MAX);
                    let m3 = match rel.relation {
                        RelationType::And => m1 & m2,
                        RelationType::Or => m1 | m2,
                        _ => m1 ^ m2,
                    };
                    if require_nonempty && m3 == 0 {
                        continue;
                    }
                    values[t[0]] = m1;
                    values[t[1]] = m2;
                    values[t[2]] = m3;
                    ok = true;
                    break;
                }
                if !ok {
                    return Err(relation_infeasible(rel, "mask sampling exhausted retries"));
                }
            }
        }
        RelationType::Constant => {
            for t in &triples {
                let m = random_mask(rng, width, 1, POSITION_MAX);
                for &p in t {
                    values[p] = m;
                }
            }
        }
        RelationType::ConsistentUnion => {
            // Three distinct masks, same set in every line.
            let mut set = Vec::new();
            for _ in 0..max_retries {
                let m = random_mask(rng, width, 1, POSITION_MAX);
                if !set.contains(&m) {
                    set.push(m);
                }
                if set.len() == 3 {
                    break;
                }
            }
            if set.len() < 3 {
                return Err(relation_infeasible(rel, "could not draw 3 distinct masks"));
            }
            for t in &triples {
                let mut perm = set.clone();
                perm.shuffle(rng);
                for (i, &p) in t.iter().enumerate() {
                    values[p] = perm[i];
                }
            }
        }
        _ => return Err(relation_infeasible(rel, "not a set relation")),
    }
    Ok(())
}

/// Pick attribute-disjoint relations from the pool.
fn sample_relations(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Vec<RelationSpec>> {
    let count = rng.random_range(config.relations_min..=config.relations_max);
    let mut chosen: Vec<RelationSpec> = Vec::new();
    let mut attempts = 0;
    while chosen.len() < count {
        attempts += 1;
        if attempts > config.max_retries {
            return Err(Error::Generation(format!(
                "could not pick {count} compatible relations from pool of {}",
                config.relation_pool.len()
            )));
        }
        let &(r, o, a) = pick(rng, &config.relation_pool);
        let orientation = *pick(rng, &config.orientations);
        let rel = RelationSpec { relation: r, object: o, attribute: a, orientation };
        let clash = chosen.iter().any(|c| {
            (c.object, c.attribute) == (o, a)
                || (c.object == ObjectKind::Shape
                    && o == ObjectKind::Shape
                    && matches!(
                        (c.attribute, a),
                        (AttributeKind::Position, AttributeKind::Number)
                            | (AttributeKind::Number, AttributeKind::Position)
                    ))
        });
        if !clash {
            chosen.push(rel);
        }
    }
    Ok(chosen)
}

fn build_grid(
    config: &GeneratorConfig,
    relations: &[RelationSpec],
    rng: &mut ChaCha8Rng,
) -> Result<GridAttrs> {
    let has = |o: ObjectKind, a: AttributeKind| {
        relations.iter().any(|r| r.object == o && r.attribute == a)
    };
    let other_shape_attr_bound = relations.iter().any(|r| {
        r.object == ObjectKind::Shape
            && matches!(r.attribute, AttributeKind::Type | AttributeKind::Size | AttributeKind::Color)
    });
    let default_scalar = |rng: &mut ChaCha8Rng, allowed: &[u8], noise: bool, out: &mut [u8; 9]| {
        if noise {
            for v in out.iter_mut() {
                *v = *pick(rng, allowed);
            }
        } else {
            let v = *pick(rng, allowed);
            out.fill(v);
        }
    };

    let mut g = GridAttrs {
        type_idx: [0; 9],
        size_idx: [0; 9],
        color_idx: [0; 9],
        cells: [0; 9],
        count: [0; 9],
        position_bound: has(ObjectKind::Shape, AttributeKind::Position),
        line_mask: [0; 9],
        line_color: [0; 9],
    };

    // Defaults first; relation fills overwrite their own attribute.
    let types: Vec<u8> = (0..config.spectra.types).collect();
    default_scalar(rng, &types, config.attribute_noise, &mut g.type_idx);
    default_scalar(rng, &config.allowed.sizes, config.attribute_noise, &mut g.size_idx);
    default_scalar(rng, &config.allowed.colors, config.attribute_noise, &mut g.color_idx);
    if config.attribute_noise {
        for i in 0..9 {
            g.count[i] = rng.random_range(1..=3);
        }
        for i in 0..9 {
            g.line_mask[i] = random_mask(rng, LINE_PATTERNS as u32, 0, 2) as u8;
        }
    } else {
        g.count.fill(rng.random_range(1..=3));
        let cells = random_cells(rng, g.count[0]);
        g.cells.fill(cells);
        g.line_mask.fill(0);
    }
    default_scalar(rng, &config.allowed.colors, config.attribute_noise, &mut g.line_color);

    for rel in relations {
        match (rel.object, rel.attribute) {
            (ObjectKind::Shape, AttributeKind::Type) => {
                fill_scalar(rng, rel, &types, &mut g.type_idx)?
            }
            (ObjectKind::Shape, AttributeKind::Size) => {
                fill_scalar(rng, rel, &config.allowed.sizes, &mut g.size_idx)?
            }
            (ObjectKind::Shape, AttributeKind::Color) => {
                fill_scalar(rng, rel, &config.allowed.colors, &mut g.color_idx)?
            }
            (ObjectKind::Shape, AttributeKind::Number) => {
                let mut counts = [0u8; 9];
                fill_scalar(rng, rel, &(1..=NUMBER_MAX).collect::<Vec<_>>(), &mut counts)?;
                g.count = counts;
            }
            (ObjectKind::Shape, AttributeKind::Position) => {
                let mut masks = [0u16; 9];
                fill_masks(rng, rel, 9, other_shape_attr_bound, config.max_retries, &mut masks)?;
                g.cells = masks;
            }
            (ObjectKind::Line, AttributeKind::Type) => {
                let mut masks = [0u16; 9];
                let needs_lines = has(ObjectKind::Line, AttributeKind::Color);
                fill_masks(rng, rel, LINE_PATTERNS as u32, needs_lines, config.max_retries, &mut masks)?;
                for i in 0..9 {
                    g.line_mask[i] = masks[i] as u8;
                }
            }
            (ObjectKind::Line, AttributeKind::Color) => {
                if !has(ObjectKind::Line, AttributeKind::Type) {
                    // Lines at fixed loci, varying only in intensity.
                    let mask = random_mask(rng, LINE_PATTERNS as u32, 1, 3) as u8;
                    g.line_mask.fill(mask);
                }
                fill_scalar(rng, rel, &config.allowed.colors, &mut g.line_color)?
            }
            _ => return Err(relation_infeasible(rel, "unsupported object/attribute pair")),
        }
    }

    // Positions derived from counts when no position relation is bound.
    if !g.position_bound {
        let number_bound = has(ObjectKind::Shape, AttributeKind::Number);
        if number_bound || config.attribute_noise {
            for i in 0..9 {
                g.cells[i] = random_cells(rng, g.count[i]);
            }
        }
    }
    Ok(g)
}

fn assemble_panel(g: &GridAttrs, idx: usize) -> PanelSpec {
    let mut panel = PanelSpec::empty();
    for cell in 0..9u8 {
        if g.cells[idx] & (1 << cell) != 0 {
            panel.shapes.push(ShapeSpec {
                shape_type: SHAPE_TYPES[g.type_idx[idx] as usize],
                size: g.size_idx[idx],
                color: g.color_idx[idx],
                cell,
            });
        }
    }
    for p in 0..LINE_PATTERNS {
        if g.line_mask[idx] & (1 << p) != 0 {
            panel.lines[p] = Some(g.line_color[idx]);
        }
    }
    panel.normalize();
    panel
}

/// Randomize one relation-free scalar attribute, for distractor diversity
/// beyond what the perturbed attribute's spectrum can provide.
fn diversify_free_attr(
    p: &mut PanelSpec,
    relations: &[RelationSpec],
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
) {
    if p.shapes.is_empty() {
        return;
    }
    let bound: Vec<AttributeKind> = relations
        .iter()
        .filter(|r| r.object == ObjectKind::Shape)
        .map(|r| r.attribute)
        .collect();
    let free: Vec<AttributeKind> = [AttributeKind::Type, AttributeKind::Size, AttributeKind::Color]
        .into_iter()
        .filter(|a| !bound.contains(a))
        .collect();
    if free.is_empty() {
        return;
    }
    match *pick(rng, &free) {
        AttributeKind::Type => {
            let v = rng.random_range(0..config.spectra.types);
            for s in &mut p.shapes {
                s.shape_type = SHAPE_TYPES[v as usize];
            }
        }
        AttributeKind::Size => {
            let v = *pick(rng, &config.allowed.sizes);
            for s in &mut p.shapes {
                s.size = v;
            }
        }
        AttributeKind::Color => {
            let v = *pick(rng, &config.allowed.colors);
            for s in &mut p.shapes {
                s.color = v;
            }
        }
        _ => {}
    }
}

/// Perturb one relation-bearing attribute of the answer panel.
fn perturb(
    answer: &PanelSpec,
    grid: &GridAttrs,
    rel: &RelationSpec,
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
) -> PanelSpec {
    let mut p = answer.clone();
    match (rel.object, rel.attribute) {
        (ObjectKind::Shape, AttributeKind::Type) => {
            let cur = grid.type_idx[8];
            let new = loop {
                let v = rng.random_range(0..config.spectra.types);
                if v != cur {
                    break v;
                }
            };
            for s in &mut p.shapes {
                s.shape_type = SHAPE_TYPES[new as usize];
            }
        }
        (ObjectKind::Shape, AttributeKind::Size) => {
            let cur = grid.size_idx[8];
            let new = *pick(rng, &config.allowed.sizes);
            let new = if new == cur {
                *config.allowed.sizes.iter().find(|&&v| v != cur).unwrap_or(&cur)
            } else {
                new
            };
            for s in &mut p.shapes {
                s.size = new;
            }
        }
        (ObjectKind::Shape, AttributeKind::Color) => {
            let cur = grid.color_idx[8];
            let new = *pick(rng, &config.allowed.colors);
            let new = if new == cur {
                *config.allowed.colors.iter().find(|&&v| v != cur).unwrap_or(&cur)
            } else {
                new
            };
            for s in &mut p.shapes {
                s.color = new;
            }
        }
        (ObjectKind::Shape, AttributeKind::Number) => {
            let cur = grid.count[8];
            let new = loop {
                let v = rng.random_range(1..=NUMBER_MAX);
                if v != cur {
                    break v;
                }
            };
            let cells = random_cells(rng, new);
            p.shapes.clear();
            for cell in 0..9u8 {
                if cells & (1 << cell) != 0 {
                    p.shapes.push(ShapeSpec {
                        shape_type: SHAPE_TYPES[grid.type_idx[8] as usize],
                        size: grid.size_idx[8],
                        color: grid.color_idx[8],
                        cell,
                    });
                }
            }
        }
        (ObjectKind::Shape, AttributeKind::Position) => {
            let cur = grid.cells[8];
            let occupied: Vec<u8> = (0..9).filter(|c| cur & (1 << c) != 0).collect();
            let free: Vec<u8> = (0..9).filter(|c| cur & (1 << c) == 0).collect();
            let new = if !occupied.is_empty() && !free.is_empty() && rng.random_range(0..2) == 0 {
                // Move one shape to a free cell.
                cur & !(1 << pick(rng, &occupied)) | 1 << pick(rng, &free)
            } else if free.is_empty() {
                cur & !(1 << pick(rng, &occupied))
            } else {
                cur ^ 1 << rng.random_range(0..9)
            };
            p.shapes.clear();
            for cell in 0..9u8 {
                if new & (1 << cell) != 0 {
                    p.shapes.push(ShapeSpec {
                        shape_type: SHAPE_TYPES[grid.type_idx[8] as usize],
                        size: grid.size_idx[8],
                        color: grid.color_idx[8],
                        cell,
                    });
                }
            }
        }
        (ObjectKind::Line, AttributeKind::Type) => {
            let flip = rng.random_range(0..LINE_PATTERNS);
            p.lines[flip] = match p.lines[flip] {
                Some(_) => None,
                None => Some(grid.line_color[8]),
            };
        }
        (ObjectKind::Line, AttributeKind::Color) => {
            let cur = grid.line_color[8];
            let new = *config.allowed.colors.iter().find(|&&v| v != cur).unwrap_or(&cur);
            for l in p.lines.iter_mut().flatten() {
                *l = new;
            }
        }
        _ => {}
    }
    p.normalize();
    p
}

/// Sample one verifiable task. The returned instance has exactly one
/// candidate satisfying all relations, with the answer slot uniform.
pub fn sample_task(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<TaskInstance> {
    config.validate()?;
    let mut last_err = None;
    for _ in 0..config.max_retries.max(1) {
        let relations = sample_relations(config, rng)?;
        let grid = match build_grid(config, &relations, rng) {
            Ok(g) => g,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let panels: Vec<PanelSpec> = (0..9).map(|i| assemble_panel(&grid, i)).collect();
        let context = &panels[..8];
        let answer = &panels[8];
        // The construction must satisfy its own relations.
        if !verify_candidate(context, answer, &relations) {
            last_err = Some(Error::Generation(format!(
                "constructed grid fails verification for {relations:?}"
            )));
            continue;
        }

        let mut distractors: Vec<PanelSpec> = Vec::with_capacity(7);
        let mut ok = true;
        for d in 0..7 {
            let rel = relations[d % relations.len()];
            let mut found = false;
            for attempt in 0..config.max_retries {
                let mut cand = perturb(answer, &grid, &rel, config, rng);
                if d >= 2 || attempt > 0 {
                    diversify_free_attr(&mut cand, &relations, config, rng);
                }
                if cand != *answer
                    && !distractors.contains(&cand)
                    && !verify_candidate(context, &cand, &relations)
                {
                    distractors.push(cand);
                    found = true;
                    break;
                }
            }
            if !found {
                last_err = Some(relation_infeasible(&rel, "could not build a failing distractor"));
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }

        let slot = rng.random_range(0..8u8);
        let mut candidates: Vec<PanelSpec> = Vec::with_capacity(8);
        let mut it = distractors.into_iter();
        for i in 0..8u8 {
            if i == slot {
                candidates.push(answer.clone());
            } else {
                candidates.push(it.next().unwrap());
            }
        }

        let meta_target = config.vocabulary.encode(&relations)?;
        let rasters: Vec<Vec<u8>> = context
            .iter()
            .chain(candidates.iter())
            .map(|p| render_panel(p, config.panel_side, &config.spectra))
            .collect();

        return Ok(TaskInstance {
            context: context.to_vec(),
            candidates,
            answer: slot,
            relations,
            meta_target,
            rasters,
            side: config.panel_side,
        });
    }
    Err(last_err.unwrap_or_else(|| Error::Generation("retry budget exhausted".into())))
}

#[cfg(test)]
mod tests {
    use rand_chacha::rand_core::SeedableRng;

    use super::super::{AttrSets, MetaVocabulary, Orientation};
    use super::*;

    fn cfg(pool: Vec<(RelationType, ObjectKind, AttributeKind)>) -> GeneratorConfig {
        let mut c = GeneratorConfig::new(pool, MetaVocabulary::full());
        c.panel_side = 48;
        c
    }

    #[test]
    fn xor_position_tasks_satisfy_row_xor() {
        let mut c = cfg(vec![(RelationType::Xor, ObjectKind::Shape, AttributeKind::Position)]);
        c.orientations = vec![Orientation::Rows];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let t = sample_task(&c, &mut rng).unwrap();
            let full: Vec<&PanelSpec> = t
                .context
                .iter()
                .chain(std::iter::once(&t.candidates[t.answer as usize]))
                .collect();
            for row in [[0, 1, 2], [3, 4, 5], [6, 7, 8]] {
                let m1 = full[row[0]].cell_mask();
                let m2 = full[row[1]].cell_mask();
                let m3 = full[row[2]].cell_mask();
                assert_eq!(m3, m1 ^ m2);
            }
        }
    }

    #[test]
    fn constant_type_tasks_share_type_per_row() {
        let mut c = cfg(vec![(RelationType::Constant, ObjectKind::Shape, AttributeKind::Type)]);
        c.orientations = vec![Orientation::Rows];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = sample_task(&c, &mut rng).unwrap();
        let full: Vec<&PanelSpec> = t
            .context
            .iter()
            .chain(std::iter::once(&t.candidates[t.answer as usize]))
            .collect();
        for row in [[0, 1, 2], [3, 4, 5], [6, 7, 8]] {
            let types: Vec<_> = row
                .iter()
                .map(|&p| full[p].shapes.first().map(|s| s.shape_type))
                .collect();
            assert!(types.iter().all(|t| *t == types[0] && t.is_some()));
        }
    }

    #[test]
    fn exactly_one_candidate_verifies() {
        // Exhaustive check of all 8 candidates over every relation type.
        let c = cfg(super::super::LEGAL_TUPLES.to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let t = sample_task(&c, &mut rng).unwrap();
            let hits: Vec<usize> = (0..8)
                .filter(|&i| verify_candidate(&t.context, &t.candidates[i], &t.relations))
                .collect();
            assert_eq!(hits, vec![t.answer as usize], "relations {:?}", t.relations);
        }
    }

    #[test]
    fn regime_restriction_respected() {
        let mut c = cfg(vec![(RelationType::Progression, ObjectKind::Shape, AttributeKind::Size)]);
        c.allowed = AttrSets { sizes: vec![0, 2, 4, 6, 8], colors: vec![0, 2, 4, 6, 8] };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let t = sample_task(&c, &mut rng).unwrap();
            for p in t.context.iter().chain(t.candidates.iter()) {
                for s in &p.shapes {
                    assert!(s.size % 2 == 0 && s.color % 2 == 0);
                }
            }
        }
    }

    #[test]
    fn answer_slot_is_roughly_uniform() {
        let c = cfg(vec![(RelationType::Constant, ObjectKind::Shape, AttributeKind::Color)]);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut counts = [0usize; 8];
        for _ in 0..400 {
            let t = sample_task(&c, &mut rng).unwrap();
            counts[t.answer as usize] += 1;
        }
        for &n in &counts {
            assert!(n > 20, "answer slots {counts:?}");
        }
    }

    #[test]
    fn meta_target_matches_relations() {
        let c = cfg(LEGAL_TUPLES_SUBSET.to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let t = sample_task(&c, &mut rng).unwrap();
            assert_eq!(t.meta_target, c.vocabulary.encode(&t.relations).unwrap());
            assert_eq!(t.meta_target.iter().filter(|&&b| b).count(), t.relations.len());
        }
    }

    const LEGAL_TUPLES_SUBSET: [(RelationType, ObjectKind, AttributeKind); 3] = [
        (RelationType::Progression, ObjectKind::Shape, AttributeKind::Size),
        (RelationType::Xor, ObjectKind::Shape, AttributeKind::Position),
        (RelationType::Constant, ObjectKind::Shape, AttributeKind::Type),
    ];

    #[test]
    fn two_relation_tasks_are_constructible() {
        let mut c = cfg(vec![
            (RelationType::Progression, ObjectKind::Shape, AttributeKind::Size),
            (RelationType::Xor, ObjectKind::Shape, AttributeKind::Position),
            (RelationType::Progression, ObjectKind::Line, AttributeKind::Color),
        ]);
        c.relations_min = 2;
        c.relations_max = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let t = sample_task(&c, &mut rng).unwrap();
            assert_eq!(t.relations.len(), 2);
            let hits: Vec<usize> = (0..8)
                .filter(|&i| verify_candidate(&t.context, &t.candidates[i], &t.relations))
                .collect();
            assert_eq!(hits, vec![t.answer as usize]);
        }
    }
}
