use std::fs;
use std::path::Path;

use super::{init_model, Architecture, Model, Stage};
use crate::container::{Container, SectionTag};
use crate::error::{Error, Result};

pub fn to_container(model: &Model) -> Container {
    Container {
        tag: match model.stage {
            Stage::Closed => SectionTag::ClosedModel,
            Stage::Open => SectionTag::OpenModel,
        },
        dims: model.arch.to_dims(),
        seed: model.seed,
        values: model.tensors().concat(),
    }
}

pub fn from_container(c: &Container) -> Result<Model> {
    let stage = match c.tag {
        SectionTag::ClosedModel => Stage::Closed,
        SectionTag::OpenModel => Stage::Open,
        SectionTag::Anchors => {
            return Err(Error::Load("file holds an anchor set, not a model".into()))
        }
    };
    let arch = Architecture::from_dims(&c.dims)?;
    let mut model = init_model(&arch, c.seed).map_err(|e| Error::Load(e.to_string()))?;
    if model.param_count() != c.values.len() {
        return Err(Error::Load(format!(
            "architecture needs {} parameters but file holds {}",
            model.param_count(),
            c.values.len()
        )));
    }
    let mut offset = 0;
    for t in model.tensors_mut() {
        t.copy_from_slice(&c.values[offset..offset + t.len()]);
        offset += t.len();
    }
    model.stage = stage;
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_container(model).encode()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_container(&Container::decode(&bytes)?)
}
