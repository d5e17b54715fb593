//! Binary mask morphology and 8-connected component analysis.

/// Connected region summary: pixel count plus inclusive bounding box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub area: usize,
    pub min_x: usize,
    pub min_y: usize,
    pub max_x: usize,
    pub max_y: usize,
}

impl Component {
    pub fn bbox_area(&self) -> usize {
        (self.max_x - self.min_x + 1) * (self.max_y - self.min_y + 1)
    }
}

/// Morphological closing (dilate then erode) with a square structuring
/// element of the given radius. Radius 0 is the identity.
pub fn close(mask: &[bool], w: usize, h: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    erode(&dilate(mask, w, h, radius), w, h, radius)
}

pub fn dilate(mask: &[bool], w: usize, h: usize, radius: usize) -> Vec<bool> {
    let horiz = window_pass(mask, w, h, radius, false, |acc, v| acc || v);
    window_pass(&horiz, w, h, radius, true, |acc, v| acc || v)
}

pub fn erode(mask: &[bool], w: usize, h: usize, radius: usize) -> Vec<bool> {
    let horiz = window_pass(mask, w, h, radius, false, |acc, v| acc && v);
    window_pass(&horiz, w, h, radius, true, |acc, v| acc && v)
}

// Separable pass: combine each pixel with its +-radius neighbors along
// one axis. Out-of-bounds neighbors are skipped, which matches the
// usual border convention for both dilation and erosion.
fn window_pass(
    mask: &[bool],
    w: usize,
    h: usize,
    radius: usize,
    vertical: bool,
    combine: fn(bool, bool) -> bool,
) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = mask[y * w + x];
            for d in 1..=radius as isize {
                for sign in [-1isize, 1] {
                    let (nx, ny) = if vertical {
                        (x as isize, y as isize + sign * d)
                    } else {
                        (x as isize + sign * d, y as isize)
                    };
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    acc = combine(acc, mask[ny as usize * w + nx as usize]);
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Label 8-connected foreground components with an explicit stack.
pub fn connected_components(mask: &[bool], w: usize, h: usize) -> Vec<Component> {
    let mut visited = vec![false; w * h];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !mask[i] || visited[i] {
                continue;
            }
            visited[i] = true;
            stack.push((x, y));
            let mut comp = Component {
                area: 0,
                min_x: x,
                min_y: y,
                max_x: x,
                max_y: y,
            };
            while let Some((cx, cy)) = stack.pop() {
                comp.area += 1;
                comp.min_x = comp.min_x.min(cx);
                comp.min_y = comp.min_y.min(cy);
                comp.max_x = comp.max_x.max(cx);
                comp.max_y = comp.max_y.max(cy);
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let nx = cx as isize + dx;
                        let ny = cy as isize + dy;
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let ni = ny as usize * w + nx as usize;
                        if mask[ni] && !visited[ni] {
                            visited[ni] = true;
                            stack.push((nx as usize, ny as usize));
                        }
                    }
                }
            }
            components.push(comp);
        }
    }
    components
}
