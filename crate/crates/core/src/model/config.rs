use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub width: usize,
    pub heads: usize,
    pub backbone_layers: usize,
    /// Fraction of backbone layers that use chunk attention across frames.
    pub chunk_attn_ratio: f64,
    pub decoder_layers: usize,
    /// Image channels fed to the patch embedding (3 for RGB).
    pub in_channels: usize,
    /// Channels of the full-resolution feature map the heads consume.
    pub feature_channels: usize,
    pub head_hidden: usize,
    pub mlp_ratio: usize,
    /// Frame-index embedding rows; later frames reuse the last row.
    pub max_frames: usize,
    /// Largest patch grid side the spatial embedding covers.
    pub max_grid: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            patch_size: 8,
            width: 64,
            heads: 4,
            backbone_layers: 6,
            chunk_attn_ratio: 1.0 / 3.0,
            decoder_layers: 2,
            in_channels: 3,
            feature_channels: 8,
            head_hidden: 16,
            mlp_ratio: 2,
            max_frames: 64,
            max_grid: 8,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.width == 0 || self.heads == 0 {
            return bad("patch_size, width and heads must be positive".into());
        }
        if !self.width.is_multiple_of(self.heads) {
            return bad(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            ));
        }
        if self.backbone_layers == 0 {
            return bad("need at least one backbone layer".into());
        }
        if [
            self.in_channels,
            self.feature_channels,
            self.head_hidden,
            self.mlp_ratio,
            self.max_frames,
            self.max_grid,
        ]
        .contains(&0)
        {
            return bad("channel counts and table sizes must be positive".into());
        }
        self.chunked_layer_count().map(|_| ())
    }

    /// Number of chunk-attention layers; must be a whole number ≥ 1.
    pub fn chunked_layer_count(&self) -> Result<usize> {
        let exact = self.backbone_layers as f64 * self.chunk_attn_ratio;
        let count = exact.round();
        if !(exact - count).abs().lt(&1e-9) || count < 1.0 || count > self.backbone_layers as f64 {
            return Err(Error::Config(format!(
                "{} backbone layers x ratio {} is not a whole number of chunk-attention layers in 1..={}",
                self.backbone_layers, self.chunk_attn_ratio, self.backbone_layers
            )));
        }
        Ok(count as usize)
    }

    /// Backbone depths (0-indexed) of the chunk-attention layers, evenly
    /// spaced with the last one at the top of the backbone.
    pub fn chunked_layer_depths(&self) -> Result<Vec<usize>> {
        let count = self.chunked_layer_count()?;
        let l = self.backbone_layers;
        Ok((0..count).map(|k| (k + 1) * l / count - 1).collect())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    /// One `key = value` line per field.
    pub fn to_text(&self) -> String {
        format!(
            "patch_size = {}\nwidth = {}\nheads = {}\nbackbone_layers = {}\nchunk_attn_ratio = {}\n\
             decoder_layers = {}\nin_channels = {}\nfeature_channels = {}\nhead_hidden = {}\n\
             mlp_ratio = {}\nmax_frames = {}\nmax_grid = {}\nseed = {}\n",
            self.patch_size,
            self.width,
            self.heads,
            self.backbone_layers,
            self.chunk_attn_ratio,
            self.decoder_layers,
            self.in_channels,
            self.feature_channels,
            self.head_hidden,
            self.mlp_ratio,
            self.max_frames,
            self.max_grid,
            self.seed
        )
    }

    /// Inverse of [`ModelConfig::to_text`]. Missing keys keep their
    /// defaults; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ModelConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| Error::Parse(format!("model config line {}: {m}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let int = || value.parse::<usize>().map_err(|e| err(format!("{key}: {e}")));
            match key {
                "patch_size" => c.patch_size = int()?,
                "width" => c.width = int()?,
                "heads" => c.heads = int()?,
                "backbone_layers" => c.backbone_layers = int()?,
                "chunk_attn_ratio" => {
                    c.chunk_attn_ratio = value.parse().map_err(|e| err(format!("{key}: {e}")))?
                }
                "decoder_layers" => c.decoder_layers = int()?,
                "in_channels" => c.in_channels = int()?,
                "feature_channels" => c.feature_channels = int()?,
                "head_hidden" => c.head_hidden = int()?,
                "mlp_ratio" => c.mlp_ratio = int()?,
                "max_frames" => c.max_frames = int()?,
                "max_grid" => c.max_grid = int()?,
                "seed" => c.seed = value.parse().map_err(|e| err(format!("{key}: {e}")))?,
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_places_chunk_layers_at_two_and_five() {
        assert_eq!(ModelConfig::default().chunked_layer_depths().unwrap(), vec![2, 5]);
    }

    #[test]
    fn ratio_one_makes_every_layer_chunked() {
        let c = ModelConfig {
            chunk_attn_ratio: 1.0,
            ..Default::default()
        };
        assert_eq!(c.chunked_layer_depths().unwrap(), (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn text_round_trip() {
        let c = ModelConfig {
            width: 32,
            in_channels: 4,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(ModelConfig::parse(&c.to_text()).unwrap(), c);
        assert!(ModelConfig::parse("depth = 3").is_err());
        assert!(ModelConfig::parse("width = x").is_err());
    }

    #[test]
    fn fractional_count_rejected() {
        let c = ModelConfig {
            chunk_attn_ratio: 0.25,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            width: 66,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            chunk_attn_ratio: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
