use std::path::{Path, PathBuf};

use super::TrainError;
use crate::kv::KvMap;
use crate::projector::{project_parallel_with, BiplanarGeometry, Projection};
use crate::volume::{
    generate_phantom, load_intensity, load_labels, save_labels, save_volume, subject_id, DatasetSplit, Dims, LabelGrid, PhantomSpec,
    Spacing, VolumeGeometry, VoxelGrid,
};

/// One phantom with its biplanar DRRs.
#[derive(Debug, Clone)]
pub struct Subject {
    pub id: String,
    pub volume: VoxelGrid,
    pub labels: LabelGrid,
    pub pa: Projection,
    pub lat: Projection,
}

impl Subject {
    pub fn simulate(id: &str, volume: VoxelGrid, labels: LabelGrid, geometry: &BiplanarGeometry, workers: usize) -> Result<Self, TrainError> {
        labels.ensure_pairs_with(&volume)?;
        if volume.dims != geometry.volume.dims {
            return Err(TrainError::Config(format!("subject {id} has dims {}, geometry expects {}", volume.dims, geometry.volume.dims)));
        }
        let pa = project_parallel_with(&volume, &geometry.pa, &geometry.detector_pa, workers)?;
        let lat = project_parallel_with(&volume, &geometry.lat, &geometry.detector_lat, workers)?;
        Ok(Self { id: id.to_string(), volume, labels, pa, lat })
    }
}

/// Subjects, their split and the shared acquisition geometry.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub geometry: BiplanarGeometry,
    /// Foreground class count.
    pub classes: u16,
    pub subjects: Vec<Subject>,
    pub split: DatasetSplit,
}

pub fn volume_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.vol.spvol"))
}

pub fn labels_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.labels.spvol"))
}

pub fn projection_path(dir: &Path, id: &str, view: &str) -> PathBuf {
    dir.join(format!("{id}.{view}.spvol"))
}

pub const SPLIT_FILE: &str = "split.txt";
pub const DATASET_FILE: &str = "dataset.txt";

pub fn geometry_to_kv(g: &BiplanarGeometry, map: &mut KvMap) {
    let d = g.volume.dims;
    let s = g.volume.spacing;
    map.set("geometry.dims", format!("{},{},{}", d.nx, d.ny, d.nz));
    map.set("geometry.spacing", format!("{},{},{}", s.sx, s.sy, s.sz));
    map.set("geometry.detector", format!("{},{}", g.detector_pa.nu, g.detector_pa.nv));
}

pub fn geometry_from_kv(map: &KvMap) -> Result<BiplanarGeometry, TrainError> {
    let three = |key: &str| -> Result<Vec<f64>, TrainError> {
        let v: Vec<f64> = map.parse_list(key, "numbers")?.ok_or_else(|| TrainError::Config(format!("missing `{key}`")))?;
        if v.len() != 3 {
            return Err(TrainError::Config(format!("`{key}` needs 3 values")));
        }
        Ok(v)
    };
    let d = three("geometry.dims")?;
    let s = three("geometry.spacing")?;
    let det: Vec<usize> = map.parse_list("geometry.detector", "integers")?.ok_or_else(|| TrainError::Config("missing `geometry.detector`".into()))?;
    if det.len() != 2 {
        return Err(TrainError::Config("`geometry.detector` needs 2 values".into()));
    }
    let vg = VolumeGeometry::new(Dims::new(d[0] as usize, d[1] as usize, d[2] as usize), Spacing::new(s[0], s[1], s[2]))?;
    Ok(BiplanarGeometry::fitted(vg, det[0], det[1])?)
}

fn read_kv(path: &Path) -> Result<KvMap, TrainError> {
    let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io { path: path.display().to_string(), source: e })?;
    Ok(KvMap::parse(&text)?)
}

fn write_text(path: &Path, text: &str) -> Result<(), TrainError> {
    std::fs::write(path, text).map_err(|e| TrainError::Io { path: path.display().to_string(), source: e })
}

/// Generates `count` phantoms from `spec` (instance seed = subject index).
pub fn generate_volumes(spec: &PhantomSpec, count: usize, dims: Dims, spacing: Spacing) -> Result<Vec<(String, VoxelGrid, LabelGrid)>, TrainError> {
    (0..count)
        .map(|n| {
            let (v, l) = generate_phantom(spec, n as u64, dims, spacing)?;
            Ok((subject_id(n), v, l))
        })
        .collect()
}

/// Writes phantom pairs and the split file into `dir`.
pub fn write_volumes(dir: &Path, volumes: &[(String, VoxelGrid, LabelGrid)], split: &DatasetSplit) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir).map_err(|e| TrainError::Io { path: dir.display().to_string(), source: e })?;
    for (id, v, l) in volumes {
        save_volume(&volume_path(dir, id), v)?;
        save_labels(&labels_path(dir, id), l)?;
    }
    write_text(&dir.join(SPLIT_FILE), &split.to_kv().to_text())
}

impl Dataset {
    /// Builds a dataset in memory from a phantom family.
    #[allow(clippy::too_many_arguments)]
    pub fn synthesize(
        spec: &PhantomSpec,
        count: usize,
        dims: Dims,
        spacing: Spacing,
        detector: (usize, usize),
        split: DatasetSplit,
        workers: usize,
    ) -> Result<Self, TrainError> {
        let geometry = BiplanarGeometry::fitted(VolumeGeometry::new(dims, spacing)?, detector.0, detector.1)?;
        let subjects = generate_volumes(spec, count, dims, spacing)?
            .into_iter()
            .map(|(id, v, l)| Subject::simulate(&id, v, l, &geometry, workers))
            .collect::<Result<_, _>>()?;
        Ok(Self { geometry, classes: spec.class_count, subjects, split })
    }

    pub fn subject(&self, id: &str) -> Option<&Subject> {
        self.subjects.iter().find(|s| s.id == id)
    }

    pub fn require(&self, id: &str) -> Result<&Subject, TrainError> {
        self.subject(id).ok_or_else(|| TrainError::Config(format!("subject `{id}` is not in the dataset")))
    }

    pub fn group(&self, ids: &[String]) -> Result<Vec<&Subject>, TrainError> {
        ids.iter().map(|id| self.require(id)).collect()
    }

    /// Writes projections and `dataset.txt` (pointing at `volumes_dir`) into `dir`.
    pub fn write_projections(&self, dir: &Path, volumes_dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::Io { path: dir.display().to_string(), source: e })?;
        for s in &self.subjects {
            s.pa.save(&projection_path(dir, &s.id, "pa"))?;
            s.lat.save(&projection_path(dir, &s.id, "lat"))?;
        }
        let mut m = KvMap::default();
        m.set("volumes", volumes_dir.display());
        m.set("classes", self.classes);
        geometry_to_kv(&self.geometry, &mut m);
        write_text(&dir.join(DATASET_FILE), &m.to_text())
    }

    /// Loads a simulated dataset directory (see [`Dataset::write_projections`]).
    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let meta = read_kv(&dir.join(DATASET_FILE))?;
        let vol_dir = PathBuf::from(meta.require("volumes")?);
        let vol_dir = if vol_dir.is_absolute() { vol_dir } else { dir.join(vol_dir) };
        let classes: u16 = meta.parse_value("classes", "integer")?.ok_or_else(|| TrainError::Config("dataset.txt lacks `classes`".into()))?;
        let geometry = geometry_from_kv(&meta)?;
        let split = DatasetSplit::from_kv(&read_kv(&vol_dir.join(SPLIT_FILE))?)?;
        let mut subjects = Vec::new();
        for id in split.all() {
            let volume = load_intensity(&volume_path(&vol_dir, id))?;
            let labels = load_labels(&labels_path(&vol_dir, id), Some(classes))?;
            labels.ensure_pairs_with(&volume)?;
            let pa = Projection::load(&projection_path(dir, id, "pa"), geometry.pa)?;
            let lat = Projection::load(&projection_path(dir, id, "lat"), geometry.lat)?;
            if pa.detector.nu != geometry.detector_pa.nu || pa.detector.nv != geometry.detector_pa.nv {
                return Err(TrainError::Config(format!("projection of {id} does not match the dataset detector")));
            }
            subjects.push(Subject { id: id.clone(), volume, labels, pa, lat });
        }
        Ok(Self { geometry, classes, subjects, split })
    }
}
