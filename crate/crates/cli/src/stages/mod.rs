//! Pipeline stages after `synth`. Each reads its inputs from files, writes
//! its outputs to the output directory and records a manifest.

pub mod assemble;
pub mod calibrate;
pub mod evaluate;
pub mod filter;

use std::path::{Path, PathBuf};

use formsmith_core::item_bank::{self, FileFormat, ItemBank};
use formsmith_core::{Error, Result};

use crate::files;
use crate::manifest::{verify_dir, FileStatus, StageRecorder};
use crate::synth::{read_json, read_rows, TruthItem, TruthModel, TruthParticipant};
use crate::Context;

/// A file an earlier stage should have written to the output directory.
pub(crate) fn stage_input(ctx: &Context, name: &str) -> Result<PathBuf> {
    let p = ctx.out.join(name);
    if !p.is_file() {
        return Err(Error::Config {
            key: "paths.output".into(),
            message: format!("{} is missing; run the stage that writes it first", p.display()),
        });
    }
    Ok(p)
}

pub(crate) fn load_items(path: &Path, rec: &mut StageRecorder) -> Result<ItemBank> {
    rec.input(path);
    item_bank::load_items(path, FileFormat::from_path(path))
}

pub(crate) fn load_responses(bank: &ItemBank, path: &Path, rec: &mut StageRecorder) -> Result<ItemBank> {
    rec.input(path);
    item_bank::load_responses(bank, path, FileFormat::from_path(path))
}

pub(crate) fn attach_embeddings(ctx: &Context, bank: &mut ItemBank, rec: &mut StageRecorder) -> Result<()> {
    let path = ctx.input("embeddings", files::EMBEDDINGS)?;
    rec.input(&path);
    bank.attach_embeddings(item_bank::load_embeddings(&path, FileFormat::from_path(&path))?)
}

pub(crate) struct Truth {
    pub items: Vec<TruthItem>,
    pub participants: Vec<TruthParticipant>,
    pub model: TruthModel,
}

/// Planted parameters written by `synth`; required by the reference simulator.
pub(crate) fn load_truth(ctx: &Context, rec: &mut StageRecorder) -> Result<Truth> {
    let items = ctx.input("truth_items", files::TRUTH_ITEMS)?;
    let participants = ctx.input("truth_participants", files::TRUTH_PARTICIPANTS)?;
    let model = ctx.input("truth_model", files::TRUTH_MODEL)?;
    for p in [&items, &participants, &model] {
        rec.input(p);
    }
    Ok(Truth {
        items: read_rows(&items)?,
        participants: read_rows(&participants)?,
        model: read_json(&model)?,
    })
}

/// Checks every manifest in the output directory; any mismatch or missing
/// file is an error.
pub fn verify(ctx: &Context) -> Result<()> {
    let checks = verify_dir(&ctx.out)?;
    let mut bad = Vec::new();
    for c in &checks {
        let tag = match c.status {
            FileStatus::Ok => "ok",
            FileStatus::Mismatch => "MISMATCH",
            FileStatus::Missing => "MISSING",
        };
        println!("{tag:<9} {:<10} {}", c.stage, c.path);
        if c.status != FileStatus::Ok {
            bad.push(format!("{} ({})", c.path, tag.to_lowercase()));
        }
    }
    if bad.is_empty() {
        println!("{} file(s) verified", checks.len());
        Ok(())
    } else {
        Err(Error::Invalid(format!("digest check failed: {}", bad.join(", "))))
    }
}
