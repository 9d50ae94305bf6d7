//! Synthetic scenes: attribute vocabularies, object layouts and the
//! geometric predicates the oracle and the agent share.
//!
//! Scenes are abstract graphs. Every object carries an axis-aligned box in
//! unit-square coordinates plus one value index per concept of the schema.
//! Horizontal order gives `left`/`right`; the vertical axis doubles as camera
//! depth, with larger `y` nearer the camera (`front`).

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("could not place {objects} objects with min_sep {min_sep} after {attempts} attempts")]
    Infeasible {
        objects: usize,
        min_sep: f64,
        attempts: usize,
    },
    #[error("objects {0} and {1} share a center coordinate")]
    Tie(usize, usize),
    #[error("unknown vocabulary {0:?}")]
    UnknownVocabulary(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Ordered attribute concepts and their value vocabularies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub name: String,
    pub concepts: Vec<Concept>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub name: String,
    pub values: Vec<String>,
}

fn concept(name: &str, values: &[&str]) -> Concept {
    Concept {
        name: name.to_string(),
        values: values.iter().map(|v| v.to_string()).collect(),
    }
}

const STANDARD_SHAPES: [&str; 3] = ["cube", "sphere", "cylinder"];
const NOVEL_SHAPES: [&str; 3] = ["cuboid", "bowl", "cone"];
const STANDARD_COLORS: [&str; 6] = ["gray", "red", "blue", "green", "yellow", "purple"];
const NOVEL_COLORS: [&str; 4] = ["pink", "brown", "cyan", "orange"];
const MATERIALS: [&str; 2] = ["rubber", "metal"];
const SIZES: [&str; 2] = ["large", "small"];

const ARID_OBJECTS: [&str; 47] = [
    "lightbulb", "apple", "bell", "calculator", "sponge", "keyboard", "marker", "scissors",
    "glue", "lime", "flashlight", "cell", "lemon", "instant", "peach", "toothpaste", "bowl",
    "rubber", "camera", "orange", "banana", "plate", "coffee", "ball", "mushroom", "food",
    "pear", "pitcher", "dry", "kleenex", "toothbrush", "binder", "notebook", "garlic",
    "cereal", "pliers", "comb", "tomato", "water", "stapler", "onion", "greens", "potato",
    "cap", "shampoo", "hand", "soda",
];
const ARID_COLORS: [&str; 13] = [
    "blue", "brown", "purple", "grey", "yellow", "mixed", "pink", "green", "orange", "black",
    "white", "silver", "red",
];
const ARID_MATERIALS: [&str; 6] = ["cloth", "food", "metal", "plastic", "glass", "paper"];

impl AttributeSchema {
    pub fn new(name: impl Into<String>, concepts: Vec<Concept>) -> Result<Self, SceneError> {
        let schema = Self {
            name: name.into(),
            concepts,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// 3 shapes, 6 colors, 2 materials, 2 sizes.
    pub fn standard() -> Self {
        Self {
            name: "standard".into(),
            concepts: vec![
                concept("shape", &STANDARD_SHAPES),
                concept("color", &STANDARD_COLORS),
                concept("material", &MATERIALS),
                concept("size", &SIZES),
            ],
        }
    }

    /// Shapes and colors disjoint from the standard vocabulary.
    pub fn novel() -> Self {
        Self {
            name: "novel".into(),
            concepts: vec![
                concept("shape", &NOVEL_SHAPES),
                concept("color", &NOVEL_COLORS),
                concept("material", &MATERIALS),
                concept("size", &SIZES),
            ],
        }
    }

    /// Union of standard and novel: 6 shapes, 10 colors.
    pub fn mixed() -> Self {
        let shapes: Vec<&str> = STANDARD_SHAPES.iter().chain(&NOVEL_SHAPES).copied().collect();
        let colors: Vec<&str> = STANDARD_COLORS.iter().chain(&NOVEL_COLORS).copied().collect();
        Self {
            name: "mixed".into(),
            concepts: vec![
                concept("shape", &shapes),
                concept("color", &colors),
                concept("material", &MATERIALS),
                concept("size", &SIZES),
            ],
        }
    }

    /// Object category, color and material annotations of the indoor robot set.
    pub fn arid() -> Self {
        Self {
            name: "arid".into(),
            concepts: vec![
                concept("object", &ARID_OBJECTS),
                concept("color", &ARID_COLORS),
                concept("material", &ARID_MATERIALS),
            ],
        }
    }

    pub fn by_name(name: &str) -> Result<Self, SceneError> {
        match name {
            "standard" => Ok(Self::standard()),
            "novel" => Ok(Self::novel()),
            "mixed" => Ok(Self::mixed()),
            "arid" => Ok(Self::arid()),
            other => Err(SceneError::UnknownVocabulary(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.concepts.is_empty() {
            return Err(SceneError::InvalidSchema("no concepts".into()));
        }
        for (i, c) in self.concepts.iter().enumerate() {
            if c.values.len() < 2 {
                return Err(SceneError::InvalidSchema(format!(
                    "concept {:?} has fewer than 2 values",
                    c.name
                )));
            }
            if self.concepts[..i].iter().any(|o| o.name == c.name) {
                return Err(SceneError::InvalidSchema(format!("duplicate concept {:?}", c.name)));
            }
            for (j, v) in c.values.iter().enumerate() {
                if c.values[..j].contains(v) {
                    return Err(SceneError::InvalidSchema(format!(
                        "duplicate value {v:?} in concept {:?}",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    /// `n_a` for every concept, in schema order.
    pub fn cardinalities(&self) -> Vec<usize> {
        self.concepts.iter().map(|c| c.values.len()).collect()
    }

    pub fn concept_index(&self, name: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c.name == name)
    }

    pub fn value_index(&self, concept: usize, value: &str) -> Option<usize> {
        self.concepts[concept].values.iter().position(|v| v == value)
    }

    pub fn value_name(&self, concept: usize, value: usize) -> &str {
        &self.concepts[concept].values[value]
    }
}

/// Axis-aligned box; `x`,`y` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        (ax - bx).hypot(ay - by)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub location: BBox,
    /// One value index per schema concept, in schema order.
    pub attributes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: u64,
    pub seed: u64,
    pub objects: Vec<SceneObject>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HRel {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VRel {
    Front,
    Behind,
}

/// A relation on a single axis, as used by one-hop questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Left,
    Right,
    Front,
    Behind,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::Left, Relation::Right, Relation::Front, Relation::Behind];

    pub fn token(&self) -> &'static str {
        match self {
            Relation::Left => "left",
            Relation::Right => "right",
            Relation::Front => "front",
            Relation::Behind => "behind",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.token() == s)
    }

    /// Whether `a` stands in this relation to `b`.
    pub fn holds(&self, a: &BBox, b: &BBox) -> bool {
        let (ax, ay) = a.center();
        let (bx, by) = b.center();
        match self {
            Relation::Left => ax < bx,
            Relation::Right => ax > bx,
            Relation::Front => ay > by,
            Relation::Behind => ay < by,
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Absolute position of an object within the whole scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Position {
    LeftMost,
    RightMost,
    Closest,
    Farthest,
    None,
}

impl Position {
    /// Priority order used by [`extremal_position`].
    pub const EXTREMES: [Position; 4] = [
        Position::LeftMost,
        Position::RightMost,
        Position::Closest,
        Position::Farthest,
    ];

    pub fn token(&self) -> &'static str {
        match self {
            Position::LeftMost => "left-most",
            Position::RightMost => "right-most",
            Position::Closest => "closest",
            Position::Farthest => "farthest",
            Position::None => "none",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        Self::EXTREMES.into_iter().find(|p| p.token() == s)
    }

    /// Index of the object holding this extreme, if any objects exist.
    pub fn holder(&self, boxes: &[BBox]) -> Option<usize> {
        let key = |b: &BBox| -> f64 {
            let (cx, cy) = b.center();
            match self {
                Position::LeftMost => cx,
                Position::RightMost => -cx,
                Position::Closest => -cy,
                Position::Farthest => cy,
                Position::None => 0.0,
            }
        };
        if *self == Position::None {
            return None;
        }
        boxes
            .iter()
            .enumerate()
            .min_by(|a, b| key(a.1).total_cmp(&key(b.1)))
            .map(|(i, _)| i)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Horizontal and depth relation of `a` with respect to `b`.
pub fn spatial_relation(a: &BBox, b: &BBox) -> Result<(HRel, VRel), SceneError> {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    if ax == bx || ay == by {
        return Err(SceneError::InvalidScene(
            "equal centers on an axis; relation undefined".into(),
        ));
    }
    let h = if ax < bx { HRel::Left } else { HRel::Right };
    let v = if ay > by { VRel::Front } else { VRel::Behind };
    Ok((h, v))
}

/// First applicable extreme among left-most, right-most, closest, farthest.
pub fn extremal_position(boxes: &[BBox], k: usize) -> Position {
    Position::EXTREMES
        .into_iter()
        .find(|p| p.holder(boxes) == Some(k))
        .unwrap_or(Position::None)
}

impl Scene {
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn boxes(&self) -> Vec<BBox> {
        self.objects.iter().map(|o| o.location).collect()
    }

    pub fn extremal_position(&self, k: usize) -> Position {
        extremal_position(&self.boxes(), k)
    }

    pub fn relation(&self, a: usize, b: usize) -> Result<(HRel, VRel), SceneError> {
        if a == b {
            return Err(SceneError::InvalidScene("relation of an object to itself".into()));
        }
        spatial_relation(&self.objects[a].location, &self.objects[b].location)
            .map_err(|_| SceneError::Tie(a, b))
    }

    pub fn validate(&self, schema: &AttributeSchema) -> Result<(), SceneError> {
        let cards = schema.cardinalities();
        for (k, o) in self.objects.iter().enumerate() {
            let b = o.location;
            if !(0.0..=1.0).contains(&b.x) || !(0.0..=1.0).contains(&b.y) || b.w <= 0.0 || b.h <= 0.0 {
                return Err(SceneError::InvalidScene(format!("object {k} has an invalid box")));
            }
            if o.attributes.len() != cards.len() {
                return Err(SceneError::InvalidScene(format!(
                    "object {k} has {} attributes, schema has {}",
                    o.attributes.len(),
                    cards.len()
                )));
            }
            if o.attributes.iter().zip(&cards).any(|(v, n)| v >= n) {
                return Err(SceneError::InvalidScene(format!("object {k} has an out-of-range value")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGenConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Minimum center separation, applied independently on each axis.
    pub min_sep: f64,
    pub max_attempts: usize,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            min_objects: 5,
            max_objects: 10,
            min_sep: 0.02,
            max_attempts: 10_000,
        }
    }
}

fn box_extent(schema: &AttributeSchema, attributes: &[usize]) -> f64 {
    match schema.concept_index("size") {
        Some(c) => match schema.value_name(c, attributes[c]) {
            "large" => 0.14,
            "small" => 0.08,
            _ => 0.1,
        },
        None => 0.1,
    }
}

/// Samples a scene: uniform object count, uniform attribute values and
/// rejection-sampled centers separated by `min_sep` on both axes.
pub fn generate_scene(
    schema: &AttributeSchema,
    params: &SceneGenConfig,
    seed: u64,
) -> Result<Scene, SceneError> {
    if params.min_objects < 1 || params.min_objects > params.max_objects {
        return Err(SceneError::InvalidScene(format!(
            "object count range [{}, {}] is empty",
            params.min_objects, params.max_objects
        )));
    }
    if params.min_sep <= 0.0 {
        return Err(SceneError::InvalidScene("min_sep must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(params.min_objects..=params.max_objects);
    let cards = schema.cardinalities();
    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while objects.len() < count {
        let attributes: Vec<usize> = cards.iter().map(|&n| rng.random_range(0..n)).collect();
        let extent = box_extent(schema, &attributes);
        loop {
            attempts += 1;
            if attempts > params.max_attempts {
                return Err(SceneError::Infeasible {
                    objects: count,
                    min_sep: params.min_sep,
                    attempts: params.max_attempts,
                });
            }
            let cx = rng.random_range(0.5 * extent..=1.0 - 0.5 * extent);
            let cy = rng.random_range(0.5 * extent..=1.0 - 0.5 * extent);
            let clear = objects.iter().all(|o| {
                let (ox, oy) = o.location.center();
                (ox - cx).abs() >= params.min_sep && (oy - cy).abs() >= params.min_sep
            });
            if clear {
                let location = BBox {
                    x: cx - 0.5 * extent,
                    y: cy - 0.5 * extent,
                    w: extent,
                    h: extent,
                };
                objects.push(SceneObject {
                    location,
                    attributes,
                });
                break;
            }
        }
    }
    Ok(Scene {
        id: seed,
        seed,
        objects,
    })
}

/// A schema header plus its scenes; the on-disk dataset format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: AttributeSchema,
    pub scenes: Vec<Scene>,
}

/// Default split sizes: train / val / test, and test fold size.
pub const SPLIT_SIZES: (usize, usize, usize) = (900, 300, 600);
pub const FOLD_SIZE: usize = 50;

impl Dataset {
    /// Generates `count` scenes; scene `i` uses a seed derived from `seed` and `i`.
    pub fn generate(
        schema: AttributeSchema,
        params: &SceneGenConfig,
        count: usize,
        seed: u64,
    ) -> Result<Self, SceneError> {
        schema.validate()?;
        let mut seeder = ChaCha8Rng::seed_from_u64(seed);
        let mut scenes = Vec::with_capacity(count);
        for i in 0..count {
            let mut scene = generate_scene(&schema, params, seeder.random())?;
            scene.id = i as u64;
            scenes.push(scene);
        }
        Ok(Self { schema, scenes })
    }

    pub fn to_json(&self) -> Result<String, SceneError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let ds: Dataset = serde_json::from_str(text)?;
        ds.schema.validate()?;
        for s in &ds.scenes {
            s.validate(&ds.schema)?;
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Train/val/test partition in the default proportions (900/300/600 of 1800),
    /// scaled down proportionally for smaller datasets.
    pub fn splits(&self) -> (&[Scene], &[Scene], &[Scene]) {
        let n = self.scenes.len();
        let (tr, va, te) = SPLIT_SIZES;
        let total = tr + va + te;
        let n_train = n * tr / total;
        let n_val = n * va / total;
        (
            &self.scenes[..n_train],
            &self.scenes[n_train..n_train + n_val],
            &self.scenes[n_train + n_val..],
        )
    }
}

/// Consecutive folds of `fold_size` scenes; a trailing partial fold is dropped.
pub fn folds(scenes: &[Scene], fold_size: usize) -> Vec<&[Scene]> {
    scenes.chunks_exact(fold_size).collect()
}
