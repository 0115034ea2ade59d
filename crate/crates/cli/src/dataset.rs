//! On-disk synthetic corpus: one motion, IMU, caption and scene file per
//! sequence plus a split manifest.

use std::path::{Path, PathBuf};

use imu4d_core::format::{parse_imu, parse_motion, parse_scene, write_imu, write_motion, write_scene};
use imu4d_core::imu::{default_placements, synthesize_imu, ImuSequence};
use imu4d_core::kinematics::{MotionSequence, Skeleton};
use imu4d_core::scene::{ClassTaxonomy, SceneLayout};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{SplitSel, SynthConfig};
use crate::error::{self, CliError, CliResult};
use crate::scenario::{Primitive, Scenario};

pub const MANIFEST: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// 80/10/10 by CRC-32 of the sequence id.
    pub fn of(id: &str) -> Split {
        match crc32fast::hash(id.as_bytes()) % 10 {
            0..=7 => Split::Train,
            8 => Split::Val,
            _ => Split::Test,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn from_name(s: &str) -> Option<Split> {
        [Split::Train, Split::Val, Split::Test].into_iter().find(|x| x.name() == s)
    }

    pub fn selected(self, sel: SplitSel) -> bool {
        matches!((sel, self), (SplitSel::All, _) | (SplitSel::Train, Split::Train) | (SplitSel::Val, Split::Val) | (SplitSel::Test, Split::Test))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub primitive: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub motion: MotionSequence,
    pub imu: ImuSequence,
    pub caption: String,
    pub scene: SceneLayout,
}

/// Scenarios cycle through the primitives so every kind is represented.
pub fn generate_scenarios(cfg: &SynthConfig, tax: &ClassTaxonomy) -> CliResult<Vec<Scenario>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.count)
        .map(|i| {
            let p = Primitive::ALL[i % Primitive::ALL.len()];
            Ok(Scenario::random(&mut rng, &format!("seq{i:05}"), p, cfg.duration, cfg.fps, tax)?)
        })
        .collect()
}

pub fn record_of(s: &Scenario, skel: &Skeleton) -> CliResult<Record> {
    let motion = s.motion(skel);
    let imu = synthesize_imu(skel, &motion, &default_placements())?;
    Ok(Record { id: s.id.clone(), motion, imu, caption: s.caption.clone(), scene: s.scene.clone() })
}

fn file(dir: &Path, id: &str, ext: &str) -> PathBuf {
    dir.join(format!("{id}.{ext}"))
}

pub fn write_record(dir: &Path, r: &Record) -> CliResult<()> {
    error::write(&file(dir, &r.id, "motion"), write_motion(&r.motion))?;
    error::write(&file(dir, &r.id, "imu"), write_imu(&r.imu))?;
    error::write(&file(dir, &r.id, "txt"), format!("{}\n", r.caption))?;
    error::write(&file(dir, &r.id, "scene"), write_scene(&r.scene))
}

pub fn write_dataset(dir: &Path, scenarios: &[Scenario], skel: &Skeleton) -> CliResult<Vec<ManifestEntry>> {
    let mut manifest = String::from("id\tsplit\tprimitive\n");
    let mut entries = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        write_record(dir, &record_of(s, skel)?)?;
        let e = ManifestEntry { id: s.id.clone(), split: Split::of(&s.id), primitive: s.primitive.name().to_string() };
        manifest.push_str(&format!("{}\t{}\t{}\n", e.id, e.split.name(), e.primitive));
        entries.push(e);
    }
    error::write(&dir.join(MANIFEST), manifest)?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> CliResult<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = error::read_to_string(&path)?;
    let bad = |line: usize| CliError::Core(imu4d_core::Error::Parse { line, msg: format!("malformed manifest row in {}", path.display()) });
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let cols: Vec<&str> = l.split('\t').collect();
            match cols.as_slice() {
                [id, split, prim] => Ok(ManifestEntry { id: id.to_string(), split: Split::from_name(split).ok_or_else(|| bad(i + 1))?, primitive: prim.to_string() }),
                _ => Err(bad(i + 1)),
            }
        })
        .collect()
}

pub fn load_record(dir: &Path, id: &str) -> CliResult<Record> {
    let motion = parse_motion(&error::read_to_string(&file(dir, id, "motion"))?)?;
    let imu = parse_imu(&error::read_to_string(&file(dir, id, "imu"))?)?;
    let caption = error::read_to_string(&file(dir, id, "txt"))?.trim().to_string();
    let scene = parse_scene(&error::read_to_string(&file(dir, id, "scene"))?)?;
    Ok(Record { id: id.to_string(), motion, imu, caption, scene })
}

/// Records of the selected split in manifest order.
pub fn load_split(dir: &Path, sel: SplitSel) -> CliResult<Vec<Record>> {
    read_manifest(dir)?.iter().filter(|e| e.split.selected(sel)).map(|e| load_record(dir, &e.id)).collect()
}
