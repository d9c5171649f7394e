use pacattn::AttentionMap;

/// Binary greyscale image, linearly scaled so the largest cell is 255.
pub fn render(map: &AttentionMap) -> Vec<u8> {
    let max = map.weights().iter().cloned().fold(0.0f64, f64::max);
    let mut out = format!("P5 {} {} 255\n", map.width(), map.height()).into_bytes();
    out.extend(map.weights().iter().map(|&v| {
        if max > 0.0 {
            (255.0 * v / max).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}
