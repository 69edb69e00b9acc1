use crate::raster::{BinaryMap, Plane};

/// One 8-connected foreground region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    /// 1-based label, in row-major order of each component's first cell.
    pub label: u32,
    /// `(x, y)` cells in row-major order.
    pub pixels: Vec<(usize, usize)>,
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// Inclusive `(x0, y0, x1, y1)`.
    pub fn bounds(&self) -> (usize, usize, usize, usize) {
        let mut b = (usize::MAX, usize::MAX, 0, 0);
        for &(x, y) in &self.pixels {
            b.0 = b.0.min(x);
            b.1 = b.1.min(y);
            b.2 = b.2.max(x);
            b.3 = b.3.max(y);
        }
        b
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labeling {
    /// 0 for background, otherwise the component label.
    pub labels: Plane<u32>,
    pub components: Vec<Component>,
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // keep the smaller provisional label as root
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass 8-connected labeling with union-find equivalences.
pub fn connected_components(map: &BinaryMap) -> Labeling {
    let (w, h) = map.dims();
    let mut provisional = Plane::new(w, h, 0u32);
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            if !map.get(x, y) {
                continue;
            }
            // Already-visited neighbours: W, NW, N, NE.
            let mut neighbours = [0u32; 4];
            let mut count = 0;
            if x > 0 && provisional.get(x - 1, y) != 0 {
                neighbours[count] = provisional.get(x - 1, y);
                count += 1;
            }
            if y > 0 {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let l = provisional.get(nx, y - 1);
                    if l != 0 {
                        neighbours[count] = l;
                        count += 1;
                    }
                }
            }
            let label = if count == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                l
            } else {
                let first = neighbours[0];
                for &n in &neighbours[1..count] {
                    union(&mut parent, first, n);
                }
                neighbours[..count].iter().copied().min().unwrap()
            };
            provisional.set(x, y, label);
        }
    }

    let mut final_label = vec![0u32; parent.len()];
    let mut labels = Plane::new(w, h, 0u32);
    let mut components: Vec<Component> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = provisional.get(x, y);
            if p == 0 {
                continue;
            }
            let root = find(&mut parent, p) as usize;
            if final_label[root] == 0 {
                components.push(Component {
                    label: components.len() as u32 + 1,
                    pixels: Vec::new(),
                });
                final_label[root] = components.len() as u32;
            }
            let l = final_label[root];
            labels.set(x, y, l);
            components[l as usize - 1].pixels.push((x, y));
        }
    }
    Labeling { labels, components }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(rows: &[&str]) -> BinaryMap {
        let h = rows.len();
        let w = rows[0].len();
        Plane::from_fn(w, h, |x, y| rows[y].as_bytes()[x] == b'#')
    }

    #[test]
    fn solid_blob() {
        let l = connected_components(&map(&["....", ".##.", ".##.", "...."]));
        assert_eq!(l.components.len(), 1);
        assert_eq!(l.components[0].area(), 4);
    }

    #[test]
    fn diagonal_touch_is_connected() {
        let l = connected_components(&map(&["#.", ".#"]));
        assert_eq!(l.components.len(), 1);
        let l = connected_components(&map(&[".#", "#."]));
        assert_eq!(l.components.len(), 1);
    }

    #[test]
    fn empty_map() {
        let l = connected_components(&map(&["...", "..."]));
        assert!(l.components.is_empty());
        assert!(l.labels.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn u_shape_merges_and_order_is_row_major() {
        let l = connected_components(&map(&[
            "#.#..#",
            "#.#...",
            "###.#.",
        ]));
        assert_eq!(l.components.len(), 3);
        assert_eq!(l.components[0].pixels[0], (0, 0));
        assert_eq!(l.components[0].area(), 7);
        assert_eq!(l.components[1].pixels, vec![(5, 0)]);
        assert_eq!(l.components[2].pixels, vec![(4, 2)]);
    }
}
