//! Generator as a conditional ensemble sampler.

use firecast_core::ensemble::ConditionalSampler;
use firecast_core::{Error, FieldKind, Raster};

use crate::autograd::Var;
use crate::model::Generator;
use crate::nn::Binder;
use crate::tensor::Tensor;

impl Generator {
    /// Removes terrain from the conditioning by zeroing the stem weights
    /// that read the terrain channel.
    pub fn zero_terrain_input(&mut self) {
        let idx = self.stem_weight();
        let w = &mut self.params.tensors[idx];
        let (cout, fan) = (w.shape[0], w.shape[1]);
        let per_channel = fan / self.config.in_channels;
        for o in 0..cout {
            w.data[o * fan + per_channel..o * fan + 2 * per_channel].fill(0.0);
        }
    }
}

fn unit_field(r: &Raster, what: &str, res: usize) -> firecast_core::Result<()> {
    if r.kind != FieldKind::Unit {
        return Err(Error::WrongKind {
            expected: "normalized field",
            actual: r.kind,
        });
    }
    if r.grid.rows != res || r.grid.cols != res {
        return Err(Error::InvalidParameter(format!(
            "{what} is {}x{}, model expects {res}x{res}",
            r.grid.rows, r.grid.cols
        )));
    }
    Ok(())
}

impl ConditionalSampler for Generator {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn sample(&self, measurement: &Raster, terrain: &Raster, latents: &[Vec<f32>]) -> firecast_core::Result<Vec<Raster>> {
        let r = self.config.resolution;
        unit_field(measurement, "measurement", r)?;
        unit_field(terrain, "terrain", r)?;
        if latents.is_empty() {
            return Ok(Vec::new());
        }
        let nz = self.config.latent_dim;
        if latents.iter().any(|z| z.len() != nz) {
            return Err(Error::InvalidParameter(format!("latent vectors must have length {nz}")));
        }
        let b = latents.len();
        let repeat = |f: &Raster| {
            let items: Vec<&[f32]> = (0..b).map(|_| &f.data[..]).collect();
            Var::constant(Tensor::stack(&items, &[1, r, r]))
        };
        let zs: Vec<&[f32]> = latents.iter().map(|z| &z[..]).collect();
        let z = Var::constant(Tensor::stack(&zs, &[nz]));
        let frozen = Binder::new(&self.params, false);
        let out = self
            .forward(&frozen, &repeat(measurement), &repeat(terrain), &z)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let v = out.value();
        (0..b)
            .map(|i| Raster::new(measurement.grid.clone(), FieldKind::Unit, v.item(i).to_vec()))
            .collect()
    }
}
