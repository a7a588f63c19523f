//! Layer names shared by the builders and the packed runtime. A layer named
//! `n` owns the parameters `n.W` and `n.b` (plus `n.norm.*` when standard).

pub const EMBED: &str = "embed";
pub const EMBED_NORM: &str = "embed_norm";
pub const MLP: [&str; 2] = ["head.mlp0", "head.mlp1"];
pub const OUTPUT: &str = "head.out";

/// Convolution `j` (0 or 1) of block `i`, both counted from 1 in the name.
pub fn conv(block: usize, j: usize) -> String {
    format!("block{}.conv{}", block + 1, j + 1)
}

pub fn head_dense(k: usize) -> String {
    format!("head.dense{}", k + 1)
}

pub fn block(i: usize) -> String {
    format!("block{}", i + 1)
}

pub fn embed_token() -> String {
    format!("{EMBED}.token")
}

pub fn embed_position() -> String {
    format!("{EMBED}.position")
}

/// The four projections of block `i`'s attention, in registry order.
pub fn attention(i: usize) -> [String; 4] {
    let b = block(i);
    ["query", "key", "value", "output"].map(|p| format!("{b}.attn.{p}"))
}

pub fn ffn(i: usize) -> [String; 2] {
    let b = block(i);
    [format!("{b}.ffn1"), format!("{b}.ffn2")]
}

/// Layer that owns a parameter: the name minus its last segment, and minus a
/// trailing `.norm` so a layer's own normalization is counted with it.
pub fn owner(param: &str) -> &str {
    let layer = param.rsplit_once('.').map_or(param, |(l, _)| l);
    layer.strip_suffix(".norm").unwrap_or(layer)
}
