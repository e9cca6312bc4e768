//! Synthetic labelled scenes and the ground-truth vision engine.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineError, ImageSource, Mask, Raster, Rgb, DEFAULT_HEIGHT, DEFAULT_WIDTH};

/// Object names shared by the scene generator, the goal sampler and the NLU.
pub const VOCABULARY: [&str; 12] =
    ["man", "woman", "dog", "cat", "tree", "car", "house", "ball", "bird", "boat", "sky", "grass"];

pub const DEFAULT_SCENES: usize = 130;
pub const DEFAULT_TRAIN: usize = 100;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Click {
    pub x: u32,
    pub y: u32,
}

impl Click {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rectangle,
    Ellipse,
}

impl Shape {
    fn name(self) -> &'static str {
        match self {
            Shape::Rectangle => "rectangle",
            Shape::Ellipse => "ellipse",
        }
    }
}

impl FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rectangle" => Ok(Shape::Rectangle),
            "ellipse" => Ok(Shape::Ellipse),
            other => Err(format!("unknown shape `{other}`")),
        }
    }
}

/// A shape inscribed in its bounding box `(x, y, w, h)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub shape: Shape,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub fill: Rgb,
}

impl SceneObject {
    pub fn covers(&self, px: usize, py: usize) -> bool {
        if px < self.x || py < self.y || px >= self.x + self.w || py >= self.y + self.h {
            return false;
        }
        match self.shape {
            Shape::Rectangle => true,
            Shape::Ellipse => {
                // Pixel centres against the inscribed ellipse, in doubled integer coordinates.
                let (w, h) = (self.w as i64, self.h as i64);
                let dx = 2 * (px - self.x) as i64 + 1 - w;
                let dy = 2 * (py - self.y) as i64 + 1 - h;
                dx * dx * h * h + dy * dy * w * w <= w * w * h * h
            }
        }
    }

    pub fn mask(&self, width: usize, height: usize) -> Mask {
        Mask::from_fn(width, height, |x, y| self.covers(x, y)).with_label(self.name.clone())
    }

    fn boxes_overlap(&self, other: &SceneObject) -> bool {
        self.x < other.x + other.w && other.x < self.x + self.w && self.y < other.y + other.h && other.y < self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: String,
    pub width: usize,
    pub height: usize,
    pub background: Rgb,
    pub objects: Vec<SceneObject>,
}

impl SceneSpec {
    pub fn object(&self, name: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.name.eq_ignore_ascii_case(name))
    }
}

/// Paint background then objects in order.
pub fn render(scene: &SceneSpec) -> Raster {
    let mut img = Raster::filled(scene.width, scene.height, scene.background);
    for obj in &scene.objects {
        for y in obj.y..(obj.y + obj.h).min(scene.height) {
            for x in obj.x..(obj.x + obj.w).min(scene.width) {
                if obj.covers(x, y) {
                    img.set(x, y, obj.fill);
                }
            }
        }
    }
    img
}

/// Ground-truth masks of every object named `object_name`, optionally
/// filtered to those containing `click`.
pub fn query(scene: &SceneSpec, object_name: &str, click: Option<Click>) -> Vec<Mask> {
    let name = object_name.trim();
    scene
        .objects
        .iter()
        .filter(|o| o.name.eq_ignore_ascii_case(name))
        .filter(|o| click.is_none_or(|c| o.covers(c.x as usize, c.y as usize)))
        .map(|o| o.mask(scene.width, scene.height))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub scenes: usize,
    pub train: usize,
    pub width: usize,
    pub height: usize,
    /// Add a same-named duplicate object to some scenes so queries return
    /// several candidates. Stress tests only.
    pub distractors: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            scenes: DEFAULT_SCENES,
            train: DEFAULT_TRAIN,
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            distractors: false,
        }
    }
}

/// A scene together with its rendered image and per-object masks.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub image: Raster,
    pub masks: Vec<Mask>,
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Self {
        let image = render(&spec);
        let masks = spec.objects.iter().map(|o| o.mask(spec.width, spec.height)).collect();
        Self { spec, image, masks }
    }

    pub fn id(&self) -> &str {
        &self.spec.scene_id
    }

    pub fn query(&self, object_name: &str, click: Option<Click>) -> Vec<Mask> {
        let name = object_name.trim();
        self.spec
            .objects
            .iter()
            .zip(&self.masks)
            .filter(|(o, _)| o.name.eq_ignore_ascii_case(name))
            .filter(|(o, _)| click.is_none_or(|c| o.covers(c.x as usize, c.y as usize)))
            .map(|(_, m)| m.clone())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    scenes: Vec<Scene>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn generate(config: DatasetConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let specs = (0..config.scenes).map(|i| generate_scene(&config, i, &mut rng)).collect();
        Self::from_specs(config, specs)
    }

    pub fn from_specs(config: DatasetConfig, specs: Vec<SceneSpec>) -> Self {
        let scenes: Vec<Scene> = specs.into_iter().map(Scene::new).collect();
        let index = scenes.iter().enumerate().map(|(i, s)| (s.spec.scene_id.clone(), i)).collect();
        Self { config, scenes, index }
    }

    pub fn scenes(&self) -> &[Scene] {
        &self.scenes
    }

    pub fn train(&self) -> &[Scene] {
        &self.scenes[..self.config.train.min(self.scenes.len())]
    }

    pub fn test(&self) -> &[Scene] {
        &self.scenes[self.config.train.min(self.scenes.len())..]
    }

    pub fn scene(&self, scene_id: &str) -> Option<&Scene> {
        self.index.get(scene_id).map(|i| &self.scenes[*i])
    }

    pub fn scene_ids(&self) -> impl Iterator<Item = &str> {
        self.scenes.iter().map(|s| s.id())
    }

    /// Text manifest; see [`Dataset::from_manifest`] for the format.
    pub fn manifest(&self) -> String {
        let c = &self.config;
        let mut out = String::from("# imgdial dataset v1\n");
        let _ = writeln!(out, "seed = {}", c.seed);
        let _ = writeln!(out, "width = {}", c.width);
        let _ = writeln!(out, "height = {}", c.height);
        let _ = writeln!(out, "train = {}", c.train);
        let _ = writeln!(out, "distractors = {}", c.distractors);
        for scene in &self.scenes {
            let s = &scene.spec;
            let _ = writeln!(out, "scene {} {}", s.scene_id, rgb_text(s.background));
            for o in &s.objects {
                let _ = writeln!(out, "object {} {} {} {} {} {} {}", o.name, o.shape.name(), o.x, o.y, o.w, o.h, rgb_text(o.fill));
            }
        }
        out
    }

    /// Parse a manifest:
    ///
    /// ```text
    /// seed = 7            header keys: seed, width, height, train, distractors
    /// scene <id> <r,g,b>  starts a scene with its background colour
    /// object <name> <rectangle|ellipse> <x> <y> <w> <h> <r,g,b>
    /// ```
    ///
    /// Blank lines and `#` comments are ignored.
    pub fn from_manifest(text: &str) -> Result<Self, DatasetError> {
        let mut config = DatasetConfig { scenes: 0, ..DatasetConfig::default() };
        let mut specs: Vec<SceneSpec> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| DatasetError::Manifest { line: n + 1, message };
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                [key, "=", value] => {
                    let bad = |_| err(format!("bad value for {key}"));
                    match *key {
                        "seed" => config.seed = value.parse().map_err(bad)?,
                        "width" => config.width = value.parse().map_err(bad)?,
                        "height" => config.height = value.parse().map_err(bad)?,
                        "train" => config.train = value.parse().map_err(bad)?,
                        "distractors" => config.distractors = value.parse().map_err(|_| err("bad bool".into()))?,
                        other => return Err(err(format!("unknown key `{other}`"))),
                    }
                }
                ["scene", id, bg] => specs.push(SceneSpec {
                    scene_id: id.to_string(),
                    width: config.width,
                    height: config.height,
                    background: parse_rgb(bg).ok_or_else(|| err("bad colour".into()))?,
                    objects: Vec::new(),
                }),
                ["object", name, shape, x, y, w, h, fill] => {
                    let num = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad number `{s}`")));
                    let obj = SceneObject {
                        name: name.to_string(),
                        shape: shape.parse().map_err(err)?,
                        x: num(x)?,
                        y: num(y)?,
                        w: num(w)?,
                        h: num(h)?,
                        fill: parse_rgb(fill).ok_or_else(|| err("bad colour".into()))?,
                    };
                    specs.last_mut().ok_or_else(|| err("object before any scene".into()))?.objects.push(obj);
                }
                _ => return Err(err(format!("cannot parse `{line}`"))),
            }
        }
        config.scenes = specs.len();
        Ok(Self::from_specs(config, specs))
    }

    /// Write `manifest.txt`, `<scene>.png` and `<scene>.<object>.png` files.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.txt"), self.manifest())?;
        for scene in &self.scenes {
            fs::write(dir.join(format!("{}.png", scene.id())), scene.image.to_png())?;
            for (i, (obj, mask)) in scene.spec.objects.iter().zip(&scene.masks).enumerate() {
                // Distractor duplicates share a name; disambiguate by position.
                let dup = scene.spec.objects[..i].iter().any(|o| o.name == obj.name);
                let file = if dup { format!("{}.{}.{i}.png", scene.id(), obj.name) } else { format!("{}.{}.png", scene.id(), obj.name) };
                fs::write(dir.join(file), mask.to_png())?;
            }
        }
        Ok(())
    }

    /// Load from a directory written by [`Dataset::save`]. Images are
    /// re-rendered from the manifest and checked against the stored PNGs.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let dir = dir.as_ref();
        let ds = Self::from_manifest(&fs::read_to_string(dir.join("manifest.txt"))?)?;
        for scene in &ds.scenes {
            let stored = Raster::from_png(&fs::read(dir.join(format!("{}.png", scene.id())))?)?;
            if stored != scene.image {
                return Err(DatasetError::Manifest { line: 0, message: format!("{} does not match its manifest", scene.id()) });
            }
        }
        Ok(ds)
    }
}

impl ImageSource for Dataset {
    fn load_image(&self, image_path: &str) -> Option<Raster> {
        self.scene(image_path).map(|s| s.image.clone())
    }
}

fn rgb_text(c: Rgb) -> String {
    format!("{},{},{}", c[0], c[1], c[2])
}

fn parse_rgb(s: &str) -> Option<Rgb> {
    let mut it = s.split(',').map(|p| p.parse::<u8>());
    let rgb = [it.next()?.ok()?, it.next()?.ok()?, it.next()?.ok()?];
    it.next().is_none().then_some(rgb)
}

fn random_color(rng: &mut impl Rng) -> Rgb {
    [rng.random_range(30..=225), rng.random_range(30..=225), rng.random_range(30..=225)]
}

fn place(rng: &mut impl Rng, cfg: &DatasetConfig, name: &str, placed: &[SceneObject]) -> Option<SceneObject> {
    let max_w = (cfg.width / 2).max(3);
    let max_h = (cfg.height / 2).max(3);
    for _ in 0..200 {
        let w = rng.random_range(3.max(cfg.width / 8)..=max_w);
        let h = rng.random_range(3.max(cfg.height / 8)..=max_h);
        let obj = SceneObject {
            name: name.to_string(),
            shape: if rng.random_bool(0.5) { Shape::Rectangle } else { Shape::Ellipse },
            x: rng.random_range(0..=cfg.width - w),
            y: rng.random_range(0..=cfg.height - h),
            w,
            h,
            fill: random_color(rng),
        };
        if placed.iter().all(|p| !p.boxes_overlap(&obj)) {
            return Some(obj);
        }
    }
    None
}

fn generate_scene(cfg: &DatasetConfig, index: usize, rng: &mut ChaCha8Rng) -> SceneSpec {
    loop {
        let distractor = cfg.distractors && rng.random_bool(0.5);
        let count = rng.random_range(2..=if distractor { 3 } else { 4 });
        let mut names: Vec<&str> = VOCABULARY.choose_multiple(rng, count).copied().collect();
        names.shuffle(rng);
        if distractor {
            let dup = *names.choose(rng).expect("nonempty");
            names.push(dup);
        }
        let mut objects: Vec<SceneObject> = Vec::with_capacity(names.len());
        for name in &names {
            match place(rng, cfg, name, &objects) {
                Some(o) => objects.push(o),
                None => break,
            }
        }
        if objects.len() == names.len() {
            return SceneSpec {
                scene_id: format!("scene_{index:03}"),
                width: cfg.width,
                height: cfg.height,
                background: random_color(rng),
                objects,
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset() -> Dataset {
        Dataset::generate(DatasetConfig::default())
    }

    #[test]
    fn split_sizes() {
        let ds = dataset();
        assert_eq!(ds.scenes().len(), 130);
        assert_eq!(ds.train().len(), 100);
        assert_eq!(ds.test().len(), 30);
    }

    #[test]
    fn same_seed_same_manifest() {
        assert_eq!(dataset().manifest(), dataset().manifest());
        let other = Dataset::generate(DatasetConfig { seed: 8, ..DatasetConfig::default() });
        assert_ne!(dataset().manifest(), other.manifest());
    }

    #[test]
    fn scene_invariants() {
        for scene in dataset().scenes() {
            let objs = &scene.spec.objects;
            assert!((2..=4).contains(&objs.len()), "{}", scene.id());
            for (i, a) in objs.iter().enumerate() {
                assert!(scene.masks[i].count() > 0);
                for b in &objs[i + 1..] {
                    assert_ne!(a.name, b.name);
                    assert_eq!(a.mask(64, 64).iou(&b.mask(64, 64)), 0.0);
                }
            }
        }
    }

    #[test]
    fn full_canvas_rectangle_covers_everything() {
        let spec = SceneSpec {
            scene_id: "s".into(),
            width: 16,
            height: 16,
            background: [0, 0, 0],
            objects: vec![SceneObject { name: "sky".into(), shape: Shape::Rectangle, x: 0, y: 0, w: 16, h: 16, fill: [1, 2, 3] }],
        };
        assert_eq!(query(&spec, "sky", None)[0].count(), 256);
        assert!(render(&spec).pixels().iter().all(|p| *p == [1, 2, 3]));
    }

    #[test]
    fn empty_scene_renders_background() {
        let spec = SceneSpec { scene_id: "e".into(), width: 8, height: 8, background: [5, 6, 7], objects: vec![] };
        assert_eq!(render(&spec), Raster::filled(8, 8, [5, 6, 7]));
        assert_eq!(render(&spec), render(&spec));
    }

    #[test]
    fn query_examples() {
        let ds = dataset();
        let scene = &ds.scenes()[0];
        let obj = &scene.spec.objects[0];
        let found = scene.query(&obj.name.to_uppercase(), None);
        assert_eq!(found.len(), 1);
        assert!(found[0].same_region(&scene.masks[0]));
        assert_eq!(found, query(&scene.spec, &obj.name, None));
        assert!(scene.query("unicorn", None).is_empty());
        let outside = (0..64u32)
            .flat_map(|y| (0..64u32).map(move |x| Click::new(x, y)))
            .find(|c| !obj.covers(c.x as usize, c.y as usize))
            .unwrap();
        assert!(scene.query(&obj.name, Some(outside)).is_empty());
    }

    #[test]
    fn masks_are_render_footprints() {
        let ds = dataset();
        for scene in ds.scenes().iter().take(10) {
            for (obj, mask) in scene.spec.objects.iter().zip(&scene.masks) {
                for (x, y) in mask.pixels() {
                    assert_eq!(scene.image.get(x, y), obj.fill);
                }
            }
        }
    }

    #[test]
    fn manifest_round_trip_and_directory() {
        let ds = dataset();
        let back = Dataset::from_manifest(&ds.manifest()).unwrap();
        assert_eq!(back.manifest(), ds.manifest());
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let loaded = Dataset::load(dir.path()).unwrap();
        assert_eq!(loaded.scenes()[5].image, ds.scenes()[5].image);
        assert_eq!(loaded.test().len(), 30);
    }

    #[test]
    fn manifest_errors_carry_line_numbers() {
        let err = Dataset::from_manifest("seed = 1\nobject man rectangle 0 0 2 2 1,2,3\n").unwrap_err();
        assert!(matches!(err, DatasetError::Manifest { line: 2, .. }));
    }

    #[test]
    fn distractors_give_multiple_candidates() {
        let ds = Dataset::generate(DatasetConfig { distractors: true, ..DatasetConfig::default() });
        let multi = ds.scenes().iter().any(|s| s.spec.objects.iter().any(|o| s.query(&o.name, None).len() > 1));
        assert!(multi);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn click_filter_properties(scene_idx in 0usize..130, x in 0u32..64, y in 0u32..64) {
            let ds = dataset();
            let scene = &ds.scenes()[scene_idx];
            for (obj, mask) in scene.spec.objects.iter().zip(&scene.masks) {
                let with = scene.query(&obj.name, Some(Click::new(x, y)));
                let without = scene.query(&obj.name, None);
                prop_assert!(with.iter().all(|m| without.contains(m)));
                if mask.contains(x as usize, y as usize) {
                    prop_assert!(with.contains(mask));
                }
            }
        }
    }
}
