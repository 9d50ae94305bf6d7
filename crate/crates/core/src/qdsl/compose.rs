//! Template filling: turns a question action plus the agent's committed
//! beliefs into a program and its question text.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::program::{Extreme, Node, Program};
use crate::memory::GraphMemory;
use crate::scene::{extremal_position, AttributeSchema, BBox, Position, Relation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuestionAction {
    pub target_object: usize,
    pub target_concept: usize,
    pub reference: Option<usize>,
}

impl QuestionAction {
    pub fn zero_hop(target_object: usize, target_concept: usize) -> Self {
        Self {
            target_object,
            target_concept,
            reference: None,
        }
    }

    pub fn one_hop(target_object: usize, target_concept: usize, reference: usize) -> Self {
        Self {
            target_object,
            target_concept,
            reference: Some(reference),
        }
    }

    pub fn use_reference(&self) -> bool {
        self.reference.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComposeError {
    #[error("action {0:?} does not fit a memory of {1} objects x {2} concepts")]
    OutOfRange(QuestionAction, usize, usize),
    #[error("reference equals target")]
    SelfReference,
    #[error("schema has {schema} concepts, memory has {memory}")]
    SchemaMismatch { schema: usize, memory: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedQuestion {
    pub program: Program,
    pub text: String,
}

/// Concept order for descriptions: size, color, material, remaining
/// adjectives in schema order, then the noun concept (schema concept 0).
pub fn description_order(schema: &AttributeSchema) -> Vec<usize> {
    let noun = 0;
    let mut order: Vec<usize> = ["size", "color", "material"]
        .iter()
        .filter_map(|n| schema.concept_index(n))
        .filter(|&c| c != noun)
        .collect();
    for c in 1..schema.num_concepts() {
        if !order.contains(&c) {
            order.push(c);
        }
    }
    order.push(noun);
    order
}

/// Committed filters for object `k` (excluding `skip`), innermost first.
fn committed_filters(memory: &GraphMemory, schema: &AttributeSchema, k: usize, skip: Option<usize>) -> Vec<(usize, usize)> {
    description_order(schema)
        .into_iter()
        .filter(|&c| Some(c) != skip)
        .filter_map(|c| memory.committed(k, c).map(|v| (c, v)))
        .collect()
}

fn apply_filters(schema: &AttributeSchema, filters: &[(usize, usize)], mut node: Node) -> Node {
    for &(c, v) in filters {
        node = Node::filter_attr(&schema.concepts[c].name, schema.value_name(c, v), node);
    }
    node
}

fn describe(schema: &AttributeSchema, filters: &[(usize, usize)]) -> String {
    let mut words: Vec<&str> = Vec::new();
    let mut noun = "thing";
    for &(c, v) in filters {
        if c == 0 {
            noun = schema.value_name(c, v);
        } else {
            words.push(schema.value_name(c, v));
        }
    }
    words.push(noun);
    words.join(" ")
}

fn relation_phrase(r: Relation) -> &'static str {
    match r {
        Relation::Left => "left of",
        Relation::Right => "right of",
        Relation::Front => "in front of",
        Relation::Behind => "behind",
    }
}

/// Relation of `target` w.r.t. `reference` on the axis with the larger
/// center separation (horizontal on ties).
pub fn dominant_relation(target: &BBox, reference: &BBox) -> Relation {
    let (tx, ty) = target.center();
    let (rx, ry) = reference.center();
    if (tx - rx).abs() >= (ty - ry).abs() {
        if tx < rx {
            Relation::Left
        } else {
            Relation::Right
        }
    } else if ty > ry {
        Relation::Front
    } else {
        Relation::Behind
    }
}

/// Whether `target` is the nearest of all objects standing in `relation` to `reference`.
pub fn is_closest_in_relation(boxes: &[BBox], target: usize, reference: usize, relation: Relation) -> bool {
    let r = &boxes[reference];
    let d = |o: usize| boxes[o].center_distance(r);
    (0..boxes.len())
        .filter(|&o| o != reference && relation.holds(&boxes[o], r))
        .min_by(|&a, &b| d(a).total_cmp(&d(b)))
        == Some(target)
}

pub fn compose_program(
    action: &QuestionAction,
    memory: &GraphMemory,
    schema: &AttributeSchema,
) -> Result<ComposedQuestion, ComposeError> {
    let (k_count, a_count) = (memory.num_objects(), memory.num_concepts());
    if schema.num_concepts() != a_count {
        return Err(ComposeError::SchemaMismatch {
            schema: schema.num_concepts(),
            memory: a_count,
        });
    }
    let out_of_range = action.target_object >= k_count
        || action.target_concept >= a_count
        || action.reference.is_some_and(|r| r >= k_count);
    if out_of_range {
        return Err(ComposeError::OutOfRange(*action, k_count, a_count));
    }
    if action.reference == Some(action.target_object) {
        return Err(ComposeError::SelfReference);
    }

    let boxes = memory.locations();
    let k = action.target_object;
    let a = action.target_concept;
    let concept = &schema.concepts[a].name;
    let target_filters = committed_filters(memory, schema, k, Some(a));
    let target_words = describe(schema, &target_filters);

    let (base, text) = match action.reference {
        None => {
            let pos = extremal_position(boxes, k);
            let base = match pos {
                Position::None => Node::Scene,
                p => Node::FilterPosition {
                    position: p,
                    input: Box::new(Node::Scene),
                },
            };
            let lead = match pos {
                Position::None => String::new(),
                p => format!("{} ", p.token()),
            };
            (base, format!("What {concept} is the {lead}{target_words}?"))
        }
        Some(r) => {
            let ref_filters = committed_filters(memory, schema, r, None);
            let anchor = Node::unique(apply_filters(schema, &ref_filters, Node::Scene));
            let relation = dominant_relation(&boxes[k], &boxes[r]);
            let related = Node::FilterRelation {
                relation,
                anchor: Box::new(anchor),
                input: Box::new(Node::Scene),
            };
            let closest = is_closest_in_relation(boxes, k, r, relation);
            let base = if closest {
                Node::FilterExtreme {
                    extreme: Extreme::Closest,
                    input: Box::new(related),
                }
            } else {
                related
            };
            let lead = if closest { "closest " } else { "" };
            let text = format!(
                "What {concept} is the {lead}{target_words} that is {} the {}?",
                relation_phrase(relation),
                describe(schema, &ref_filters)
            );
            (base, text)
        }
    };
    let root = Node::Query {
        concept: concept.clone(),
        input: Box::new(Node::unique(apply_filters(schema, &target_filters, base))),
    };
    let program = Program::new(root).expect("composed programs are well-formed");
    Ok(ComposedQuestion { program, text })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::Provenance;
    use crate::scene::{Scene, SceneObject};

    fn obj(cx: f64, cy: f64, attrs: [usize; 4]) -> SceneObject {
        SceneObject {
            location: BBox {
                x: cx - 0.05,
                y: cy - 0.05,
                w: 0.1,
                h: 0.1,
            },
            attributes: attrs.to_vec(),
        }
    }

    fn fixture() -> (AttributeSchema, Scene) {
        let scene = Scene {
            id: 0,
            seed: 0,
            objects: vec![
                obj(0.1, 0.5, [0, 1, 0, 0]),  // left-most
                obj(0.4, 0.45, [0, 1, 1, 0]), // interior, metal cube
                obj(0.5, 0.5, [1, 2, 0, 1]),  // interior
                obj(0.7, 0.48, [2, 3, 0, 0]), // interior, right of the metal cube
                obj(0.9, 0.2, [1, 4, 0, 1]),  // right-most
                obj(0.3, 0.9, [2, 5, 1, 0]),  // closest
                obj(0.6, 0.05, [0, 0, 0, 1]), // farthest
            ],
        };
        (AttributeSchema::standard(), scene)
    }

    #[test]
    fn zero_hop_with_committed_color() {
        let (schema, scene) = fixture();
        let mut mem = GraphMemory::for_scene(&scene, &schema).unwrap();
        mem.commit(2, 1, 1, Provenance::Oracle).unwrap(); // red
        let q = compose_program(&QuestionAction::zero_hop(2, 0), &mem, &schema).unwrap();
        assert_eq!(q.program.serialize(), "query_shape(unique(filter_color(red, scene)))");
        assert_eq!(q.text, "What shape is the red thing?");
    }

    #[test]
    fn queried_concept_never_filters_itself() {
        let (schema, scene) = fixture();
        let mut mem = GraphMemory::for_scene(&scene, &schema).unwrap();
        mem.commit(2, 0, 1, Provenance::Oracle).unwrap();
        let q = compose_program(&QuestionAction::zero_hop(2, 0), &mem, &schema).unwrap();
        assert_eq!(q.program.serialize(), "query_shape(unique(scene))");
    }

    #[test]
    fn zero_hop_left_most_uses_position() {
        let (schema, scene) = fixture();
        let mem = GraphMemory::for_scene(&scene, &schema).unwrap();
        let q = compose_program(&QuestionAction::zero_hop(0, 1), &mem, &schema).unwrap();
        assert_eq!(q.program.serialize(), "query_color(unique(filter_position(left-most, scene)))");
        assert_eq!(q.text, "What color is the left-most thing?");
    }

    #[test]
    fn one_hop_with_committed_reference() {
        let (schema, scene) = fixture();
        let mut mem = GraphMemory::for_scene(&scene, &schema).unwrap();
        mem.commit(1, 2, 1, Provenance::Oracle).unwrap(); // metal
        mem.commit(1, 0, 0, Provenance::Oracle).unwrap(); // cube
        // object 2 is right of object 1 and nearer to it than object 3
        let q = compose_program(&QuestionAction::one_hop(3, 3, 1), &mem, &schema).unwrap();
        assert_eq!(
            q.program.serialize(),
            "query_size(unique(filter_relation(right, unique(filter_shape(cube, filter_material(metal, scene))), scene)))"
        );
        assert_eq!(q.text, "What size is the thing that is right of the metal cube?");
        let near = compose_program(&QuestionAction::one_hop(2, 3, 1), &mem, &schema).unwrap();
        assert!(near.program.serialize().contains("filter_extreme(closest, filter_relation(right,"));
        assert!(near.text.starts_with("What size is the closest thing"));
    }

    #[test]
    fn rejects_bad_actions() {
        let (schema, scene) = fixture();
        let mem = GraphMemory::for_scene(&scene, &schema).unwrap();
        assert_eq!(
            compose_program(&QuestionAction::one_hop(1, 0, 1), &mem, &schema).unwrap_err(),
            ComposeError::SelfReference
        );
        assert!(compose_program(&QuestionAction::zero_hop(7, 0), &mem, &schema).is_err());
        assert!(compose_program(&QuestionAction::zero_hop(0, 4), &mem, &schema).is_err());
    }

    #[test]
    fn description_order_matches_template() {
        let std_order = description_order(&AttributeSchema::standard());
        assert_eq!(std_order, vec![3, 1, 2, 0]);
        assert_eq!(description_order(&AttributeSchema::arid()), vec![1, 2, 0]);
    }
}
