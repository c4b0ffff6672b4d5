use std::path::Path;

use avuc_core::seed::{self, stream};
use avuc_core::shiftlab::{self, ShiftKind, ShiftSpec, Split};

use super::{
    create_dir, shift_file_name, write_json, DataDescriptor, ShiftEntry, DESCRIPTOR_FILE, OOD_FILE, SHIFT_DIR,
    TEST_FILE, TRAIN_FILE, VAL_FILE,
};
use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Seed of the shifted copy for `(kind, intensity)`.
pub fn shift_seed(seed_value: u64, kind: ShiftKind, intensity: u8) -> u64 {
    let k = ShiftKind::ALL.iter().position(|&x| x == kind).unwrap_or(0) as u64;
    seed::derive_path(seed_value, &[stream::SHIFT, k, intensity as u64])
}

pub fn run(config: &ExperimentConfig, out: &Path) -> Result<DataDescriptor, CliError> {
    let ds = config.data.generate(config.seed)?;
    create_dir(&out.join(SHIFT_DIR))?;
    ds.subset(Split::Train).write_csv(out.join(TRAIN_FILE))?;
    ds.subset(Split::Val).write_csv(out.join(VAL_FILE))?;
    let test = ds.subset(Split::Test);
    test.write_csv(out.join(TEST_FILE))?;
    let ood = shiftlab::make_ood(&ds, config.data.ood_n, config.seed)?;
    ood.write_csv(out.join(OOD_FILE))?;

    let mut shifts = Vec::new();
    for kind in ShiftKind::ALL {
        for intensity in 1..=5u8 {
            let spec = ShiftSpec::new(kind, intensity, shift_seed(config.seed, kind, intensity));
            let file = shift_file_name(kind, intensity);
            shiftlab::apply_shift(&test, &spec)?.write_csv(out.join(&file))?;
            shifts.push(ShiftEntry { kind, intensity, file });
        }
    }
    let desc = DataDescriptor {
        seed: config.seed,
        class_count: ds.class_count,
        dim: ds.dim(),
        source: ds.descriptor.clone(),
        shifts,
        ood: OOD_FILE.to_string(),
    };
    write_json(&out.join(DESCRIPTOR_FILE), &desc)?;
    log::info!(
        "wrote {} examples ({} classes) and {} shifted sets to {}",
        ds.len(),
        ds.class_count,
        desc.shifts.len(),
        out.display()
    );
    Ok(desc)
}
