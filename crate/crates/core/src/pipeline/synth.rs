//! Synthetic corpus generator for end-to-end verification.
//!
//! Each user draws a latent style; a style owns a disjoint slice of the
//! vocabulary and deterministically fixes the four labels, so the task is
//! separable by construction up to the configured token noise. The I/E
//! dimension is drawn per user at the configured positive rate, mirroring the
//! heavy 0.23/0.77 imbalance of real corpora.

use crate::encoder::{Labels, UserDocument};
use crate::error::{Error, Result};
use crate::num::Rng;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeneratorConfig {
    pub users: usize,
    pub posts_per_user: usize,
    pub tokens_per_post: usize,
    pub vocab: usize,
    pub styles: usize,
    /// Positive-class rates for I/E, S/N, T/F, P/J. With fewer than sixteen
    /// styles only the I/E rate is honored exactly; the remaining dimensions
    /// follow the style patterns. With exactly sixteen styles all four rates
    /// are honored and the style equals the type index.
    pub rates: [f64; 4],
    /// Probability that a token is replaced by a uniform draw over the whole
    /// vocabulary.
    pub token_noise: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            users: 600,
            posts_per_user: 8,
            tokens_per_post: 12,
            vocab: 200,
            styles: 3,
            rates: [0.23, 0.5, 0.5, 0.5],
            token_noise: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.posts_per_user == 0 || self.tokens_per_post == 0 {
            return Err(Error::invalid(
                "users, posts_per_user, tokens_per_post must be >= 1",
            ));
        }
        if self.styles < 2 || self.styles > 16 {
            return Err(Error::invalid(format!(
                "styles = {} must lie in [2, 16]",
                self.styles
            )));
        }
        if self.vocab < self.styles {
            return Err(Error::invalid("vocabulary must cover every style"));
        }
        for r in self.rates {
            if !(0.0 < r && r < 1.0) {
                return Err(Error::invalid(format!("rate {r} outside (0, 1)")));
            }
        }
        if !(0.0..1.0).contains(&self.token_noise) {
            return Err(Error::invalid("token_noise must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Deterministic label pattern per style. Sixteen styles enumerate the type
/// indices directly; otherwise style 0 carries IE = 1 and the remaining bits
/// cycle so every dimension sees both classes.
pub fn style_labels(style: usize, styles: usize) -> Labels {
    if styles == 16 {
        return Labels::from_type_index(style).expect("style < 16");
    }
    let ie = (style == 0) as u8;
    let sn = (style % 2) as u8;
    let tf = if styles >= 3 {
        ((style >> 1) % 2) as u8
    } else {
        1 - sn
    };
    let pj = (style >= 1) as u8;
    Labels::new(ie, sn, tf, pj).expect("bits")
}

fn draw_style(cfg: &GeneratorConfig, rng: &mut Rng) -> (usize, Labels) {
    if cfg.styles == 16 {
        let bits: Vec<u8> = cfg.rates.iter().map(|&r| rng.bernoulli(r) as u8).collect();
        let labels = Labels::new(bits[0], bits[1], bits[2], bits[3]).expect("bits");
        return (labels.type_index(), labels);
    }
    // Draw the I/E bit exactly at its configured rate, then pick uniformly
    // among the styles carrying that bit.
    let ie = rng.bernoulli(cfg.rates[0]) as u8;
    let candidates: Vec<usize> = (0..cfg.styles)
        .filter(|&s| style_labels(s, cfg.styles).ie == ie)
        .collect();
    let style = candidates[rng.below(candidates.len())];
    (style, style_labels(style, cfg.styles))
}

fn style_token(cfg: &GeneratorConfig, style: usize, rng: &mut Rng) -> usize {
    // Tokens t with t % styles == style belong to this style's slice.
    let per_style = cfg.vocab / cfg.styles;
    let slot = rng.below(per_style.max(1));
    (slot * cfg.styles + style).min(cfg.vocab - 1)
}

/// Generate a labeled synthetic dataset. Identical (config, seed) pairs
/// produce identical datasets.
pub fn generate_synthetic(cfg: &GeneratorConfig, seed: u64) -> Result<Vec<UserDocument>> {
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let width = cfg.users.to_string().len().max(4);
    let mut docs = Vec::with_capacity(cfg.users);
    for u in 0..cfg.users {
        let (style, labels) = draw_style(cfg, &mut rng);
        let mut posts = Vec::with_capacity(cfg.posts_per_user);
        for _ in 0..cfg.posts_per_user {
            let mut tokens = Vec::with_capacity(cfg.tokens_per_post);
            for _ in 0..cfg.tokens_per_post {
                let t = if rng.bernoulli(cfg.token_noise) {
                    rng.below(cfg.vocab)
                } else {
                    style_token(cfg, style, &mut rng)
                };
                tokens.push(format!("w{t:03}"));
            }
            posts.push(tokens.join(" "));
        }
        docs.push(UserDocument::new(
            format!("u{u:0width$}"),
            posts,
            Some(labels),
        )?);
    }
    Ok(docs)
}

/// The latent style of a generated user, recovered from its labels. Only
/// meaningful for corpora produced by [`generate_synthetic`].
pub fn style_of(labels: &Labels, styles: usize) -> Option<usize> {
    (0..styles).find(|&s| style_labels(s, styles) == *labels)
}
