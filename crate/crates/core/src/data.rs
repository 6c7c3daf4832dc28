//! Synthetic labeled data and client partitioning.
//!
//! Partitions draw from a shared pool of unused sample indices, so shards
//! are always disjoint. Client groups are filled in declaration order: IID
//! groups by stratified round-robin dealing, then every non-IID client's
//! major-class quota, then the non-major remainder of each non-IID client.

use std::io::Write;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub class_separation: f64,
    pub noise_std: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            input_dim: 20,
            samples_per_class: 900,
            class_separation: 2.0,
            noise_std: 1.0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("dataset needs at least 2 classes".into()));
        }
        if self.input_dim == 0 || self.samples_per_class == 0 {
            return Err(Error::Config(
                "input_dim and samples_per_class must be positive".into(),
            ));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::Config("class_separation must be positive".into()));
        }
        // zero noise is accepted: every sample then sits on its class center
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Class-conditional isotropic Gaussians around fixed centers.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub spec: DatasetSpec,
    pub seed: u64,
    /// One center per class, `class_separation * u_c` with `u_c` a unit vector.
    pub centers: Vec<Vec<f64>>,
}

impl SyntheticTask {
    /// Centers are the first `num_classes` basis vectors when the input is wide
    /// enough, otherwise seeded random unit directions.
    pub fn new(spec: DatasetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (c, d) = (spec.num_classes, spec.input_dim);
        let mut rng = stream(seed, Purpose::ClassCenters, 0, 0);
        let centers = (0..c)
            .map(|class| {
                let dir: Vec<f64> = if d >= c {
                    (0..d).map(|i| if i == class { 1.0 } else { 0.0 }).collect()
                } else {
                    let raw: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    raw.into_iter().map(|v| v / norm).collect()
                };
                dir.into_iter().map(|v| v * spec.class_separation).collect()
            })
            .collect();
        Ok(Self { spec, seed, centers })
    }

    /// Draws `per_class` samples of every class, class-major. Distinct
    /// `split` values give independent draws from the same distribution.
    pub fn sample(&self, per_class: usize, split: u64) -> Batch {
        let d = self.spec.input_dim;
        let mut rng = stream(self.seed, Purpose::Samples, split, 0);
        let mut out = Batch::empty(d);
        let mut row = vec![0.0; d];
        for (class, center) in self.centers.iter().enumerate() {
            for _ in 0..per_class {
                for (x, mu) in row.iter_mut().zip(center) {
                    let z: f64 = rng.sample(StandardNormal);
                    *x = mu + self.spec.noise_std * z;
                }
                out.push(&row, class);
            }
        }
        out
    }
}

/// A labeled pool of samples with its class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub samples: Batch,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Training set for `spec`: split 0 of the task seeded with `seed`.
pub fn make_synthetic_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    let task = SyntheticTask::new(spec.clone(), seed)?;
    Ok(Dataset {
        num_classes: spec.num_classes,
        samples: task.sample(spec.samples_per_class, 0),
    })
}

/// One client's local dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub samples: Batch,
    pub label_histogram: Vec<usize>,
}

impl ClientShard {
    pub fn new(client_id: usize, samples: Batch, num_classes: usize) -> Self {
        let label_histogram = histogram(samples.labels(), num_classes);
        Self {
            client_id,
            samples,
            label_histogram,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn histogram(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut h = vec![0; num_classes];
    for &y in labels {
        h[y] += 1;
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSetting {
    Iid,
    XPctNonIid,
}

/// A run of consecutive clients sharing one label setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientGroup {
    pub count: usize,
    pub setting: LabelSetting,
    /// Percentage of each shard drawn from its major class(es); ignored for IID.
    pub x: f64,
    pub num_major: usize,
}

impl ClientGroup {
    pub fn iid(count: usize) -> Self {
        Self {
            count,
            setting: LabelSetting::Iid,
            x: 0.0,
            num_major: 1,
        }
    }

    pub fn non_iid(count: usize, x: f64, num_major: usize) -> Self {
        Self {
            count,
            setting: LabelSetting::XPctNonIid,
            x,
            num_major,
        }
    }

    fn validate(&self, num_classes: usize) -> Result<()> {
        if self.setting == LabelSetting::XPctNonIid {
            if !(self.x > 0.0 && self.x <= 100.0) {
                return Err(Error::Config(format!("x must lie in (0, 100], got {}", self.x)));
            }
            if !(1..=2).contains(&self.num_major) {
                return Err(Error::Config(format!(
                    "num_major must be 1 or 2, got {}",
                    self.num_major
                )));
            }
            if self.num_major >= num_classes {
                return Err(Error::Config("num_major must leave at least one minor class".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionScheme {
    #[serde(rename = "IID")]
    Iid,
    #[serde(rename = "NIID_A")]
    NiidA,
    #[serde(rename = "NIID_B")]
    NiidB,
}

impl PartitionScheme {
    pub fn name(self) -> &'static str {
        match self {
            PartitionScheme::Iid => "IID",
            PartitionScheme::NiidA => "NIID_A",
            PartitionScheme::NiidB => "NIID_B",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "IID" => Some(PartitionScheme::Iid),
            "NIID_A" => Some(PartitionScheme::NiidA),
            "NIID_B" => Some(PartitionScheme::NiidB),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub name: PartitionScheme,
    pub groups: Vec<ClientGroup>,
}

impl PartitionConfig {
    /// The named configuration at `n` clients. At `n = 100` the group sizes
    /// are 100 | 10+20+70 | 10+90; other sizes keep the same proportions with
    /// the rounding slack absorbed by the last group.
    pub fn named(name: PartitionScheme, n: usize) -> Self {
        let tenth = (n as f64 * 0.1).round() as usize;
        let fifth = (n as f64 * 0.2).round() as usize;
        let groups = match name {
            PartitionScheme::Iid => vec![ClientGroup::iid(n)],
            PartitionScheme::NiidA => vec![
                ClientGroup::iid(tenth),
                ClientGroup::non_iid(fifth, 95.0, 1),
                ClientGroup::non_iid(n.saturating_sub(tenth + fifth), 98.0, 1),
            ],
            PartitionScheme::NiidB => vec![
                ClientGroup::iid(tenth),
                ClientGroup::non_iid(n.saturating_sub(tenth), 100.0, 1),
            ],
        };
        Self {
            name,
            groups: groups.into_iter().filter(|g| g.count > 0).collect(),
        }
    }

    pub fn num_clients(&self) -> usize {
        self.groups.iter().map(|g| g.count).sum()
    }
}

/// Unused sample indices per class, each list in seeded random order.
struct Pool {
    by_class: Vec<Vec<usize>>,
}

impl Pool {
    fn new<R: Rng>(dataset: &Dataset, rng: &mut R) -> Self {
        let mut by_class = vec![Vec::new(); dataset.num_classes];
        for (i, &y) in dataset.samples.labels().iter().enumerate() {
            by_class[y].push(i);
        }
        for list in &mut by_class {
            list.shuffle(rng);
        }
        Self { by_class }
    }

    fn take(&mut self, class: usize, count: usize) -> Result<Vec<usize>> {
        let list = &mut self.by_class[class];
        if list.len() < count {
            return Err(Error::ClassCapacity {
                class,
                needed: count,
                available: list.len(),
            });
        }
        Ok(list.split_off(list.len() - count))
    }
}

/// Deals class-ordered `indices` round-robin over `clients` shards, keeping
/// at most `shard_size` per shard.
fn deal(indices: &[usize], clients: usize, shard_size: usize) -> Vec<Vec<usize>> {
    let mut shards = vec![Vec::with_capacity(shard_size + 1); clients];
    for (k, &i) in indices.iter().enumerate() {
        shards[k % clients].push(i);
    }
    for s in &mut shards {
        s.truncate(shard_size);
    }
    shards
}

fn finish_shards<R: Rng>(
    dataset: &Dataset,
    first_id: usize,
    assignments: Vec<Vec<usize>>,
    rng: &mut R,
) -> Vec<ClientShard> {
    assignments
        .into_iter()
        .enumerate()
        .map(|(k, mut idx)| {
            idx.shuffle(rng);
            ClientShard::new(first_id + k, dataset.samples.select(&idx), dataset.num_classes)
        })
        .collect()
}

/// Stratified IID split of the whole dataset into `n` equal shards; the
/// `len % n` leftover samples are dropped.
pub fn partition_iid(dataset: &Dataset, n: usize, seed: u64) -> Result<Vec<ClientShard>> {
    if n == 0 || n > dataset.len() {
        return Err(Error::Config(format!(
            "cannot split {} samples across {n} clients",
            dataset.len()
        )));
    }
    let mut rng = stream(seed, Purpose::Partition, 0, 0);
    let pool = Pool::new(dataset, &mut rng);
    let shard_size = dataset.len() / n;
    let dropped = dataset.len() - shard_size * n;
    if dropped > 0 {
        log::info!("partition_iid: dropping {dropped} remainder samples");
    }
    let ordered: Vec<usize> = pool.by_class.concat();
    let shards = deal(&ordered, n, shard_size);
    Ok(finish_shards(dataset, 0, shards, &mut rng))
}

/// Major classes of the `j`-th client of a non-IID group.
fn majors_of(j: usize, num_major: usize, num_classes: usize) -> Vec<usize> {
    (0..num_major)
        .map(|m| (j * num_major + m) % num_classes)
        .collect()
}

/// Per-major sample counts: `floor(x/100 * size / num_major)` each, with the
/// rounding remainder of `floor(x/100 * size)` added to the first major.
pub fn major_quota(x: f64, shard_size: usize, num_major: usize) -> Vec<usize> {
    let total = ((x / 100.0) * shard_size as f64 + 1e-9).floor() as usize;
    let total = total.min(shard_size);
    let each = total / num_major;
    let mut quota = vec![each; num_major];
    quota[0] += total - each * num_major;
    quota
}

/// x%-non-IID split of the whole dataset into `n` shards of `len / n`.
pub fn partition_x_pct_noniid(
    dataset: &Dataset,
    n: usize,
    x: f64,
    num_major: usize,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if n == 0 || n > dataset.len() {
        return Err(Error::Config(format!(
            "cannot split {} samples across {n} clients",
            dataset.len()
        )));
    }
    let config = PartitionConfig {
        name: PartitionScheme::NiidB,
        groups: vec![ClientGroup::non_iid(n, x, num_major)],
    };
    build_partition(&config, dataset, dataset.len() / n, seed)
}

/// Builds every group of `config` with equal shards of `shard_size`.
pub fn build_partition(
    config: &PartitionConfig,
    dataset: &Dataset,
    shard_size: usize,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    let n = config.num_clients();
    if n == 0 || shard_size == 0 {
        return Err(Error::Config("partition needs clients and a positive shard size".into()));
    }
    if n * shard_size > dataset.len() {
        return Err(Error::Config(format!(
            "{n} shards of {shard_size} exceed the {} available samples",
            dataset.len()
        )));
    }
    for g in &config.groups {
        g.validate(dataset.num_classes)?;
    }
    let classes = dataset.num_classes;
    let mut rng = stream(seed, Purpose::Partition, 0, 0);
    let mut pool = Pool::new(dataset, &mut rng);
    let mut assignments: Vec<Vec<usize>> = Vec::with_capacity(n);
    // (client id, majors, minor count) for the non-IID fill pass
    let mut pending = Vec::new();

    for group in &config.groups {
        match group.setting {
            LabelSetting::Iid => {
                let total = group.count * shard_size;
                let mut ordered = Vec::with_capacity(total);
                for class in 0..classes {
                    let quota = total / classes + usize::from(class < total % classes);
                    ordered.extend(pool.take(class, quota)?);
                }
                assignments.extend(deal(&ordered, group.count, shard_size));
            }
            LabelSetting::XPctNonIid => {
                let quota = major_quota(group.x, shard_size, group.num_major);
                let taken: usize = quota.iter().sum();
                for j in 0..group.count {
                    let majors = majors_of(j, group.num_major, classes);
                    let mut idx = Vec::with_capacity(shard_size);
                    for (&class, &q) in majors.iter().zip(&quota) {
                        idx.extend(pool.take(class, q)?);
                    }
                    pending.push((assignments.len(), majors, shard_size - taken));
                    assignments.push(idx);
                }
            }
        }
    }

    for (client, majors, minor) in pending {
        if minor == 0 {
            continue;
        }
        let candidates: Vec<(usize, usize)> = (0..classes)
            .filter(|c| !majors.contains(c))
            .flat_map(|c| pool.by_class[c].iter().enumerate().map(move |(pos, _)| (c, pos)))
            .collect();
        if candidates.len() < minor {
            return Err(Error::FillCapacity {
                client,
                needed: minor,
                available: candidates.len(),
            });
        }
        let mut picked: Vec<(usize, usize)> = index::sample(&mut rng, candidates.len(), minor)
            .into_iter()
            .map(|k| candidates[k])
            .collect();
        // remove from the back so earlier positions stay valid
        picked.sort_unstable_by(|a, b| b.cmp(a));
        for (class, pos) in picked {
            let sample = pool.by_class[class].swap_remove(pos);
            assignments[client].push(sample);
        }
    }

    Ok(finish_shards(dataset, 0, assignments, &mut rng))
}

/// Writes shards as CSV: `client_id,label,x0,..,x{d-1}`.
pub fn export_shards_csv<W: Write>(shards: &[ClientShard], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let dim = shards.first().map_or(0, |s| s.samples.input_dim());
    let mut header = vec!["client_id".to_string(), "label".to_string()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for shard in shards {
        for i in 0..shard.len() {
            let mut rec = vec![shard.client_id.to_string(), shard.samples.labels()[i].to_string()];
            rec.extend(shard.samples.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
