//! A fixed 68-point 3D face used by the synthetic generator and by tests.
//!
//! The points follow the common 68-landmark ordering: jawline 0-16 (left
//! cheek 1-5, chin 6-10, right cheek 11-15), brows 17-26, nose bridge 27-30
//! with the tip at index 30, nostril line 31-35, left eye 36-41, right eye
//! 42-47, outer lips 48-59, inner lips 60-67. Coordinates are unitless with
//! x to the subject's image-right, y up, and z out of the face; the nose tip
//! carries the largest z so the shape is genuinely three-dimensional.
//!
//! The table is a frozen asset: tests pin values derived from it, so edits
//! here are format-breaking.

/// Index of the nose-tip landmark used as the normalization reference.
pub const NOSE_TIP: usize = 30;

pub const FACE_TEMPLATE: [[f64; 3]; 68] = [
    [-0.9500, 0.1500, -0.3500], // 0
    [-0.9317, -0.0646, -0.3433], // 1
    [-0.8777, -0.2710, -0.3234], // 2
    [-0.7899, -0.4611, -0.2910], // 3
    [-0.6718, -0.6278, -0.2475], // 4
    [-0.5278, -0.7646, -0.1944], // 5
    [-0.3635, -0.8663, -0.1339], // 6
    [-0.1853, -0.9289, -0.0683], // 7
    [-0.0000, -0.9500, -0.0000], // 8
    [0.1853, -0.9289, -0.0683], // 9
    [0.3635, -0.8663, -0.1339], // 10
    [0.5278, -0.7646, -0.1944], // 11
    [0.6718, -0.6278, -0.2475], // 12
    [0.7899, -0.4611, -0.2910], // 13
    [0.8777, -0.2710, -0.3234], // 14
    [0.9317, -0.0646, -0.3433], // 15
    [0.9500, 0.1500, -0.3500], // 16
    [-0.6200, 0.5200, 0.2500], // 17
    [-0.5100, 0.5766, 0.2854], // 18
    [-0.4000, 0.6000, 0.3000], // 19
    [-0.2900, 0.5766, 0.2854], // 20
    [-0.1800, 0.5200, 0.2500], // 21
    [0.1800, 0.5200, 0.2500], // 22
    [0.2900, 0.5766, 0.2854], // 23
    [0.4000, 0.6000, 0.3000], // 24
    [0.5100, 0.5766, 0.2854], // 25
    [0.6200, 0.5200, 0.2500], // 26
    [0.0000, 0.4200, 0.3800], // 27
    [0.0000, 0.3200, 0.4533], // 28
    [0.0000, 0.2200, 0.5266], // 29
    [0.0000, 0.1200, 0.5999], // 30
    [-0.1600, -0.0200, 0.3700], // 31
    [-0.0800, -0.0200, 0.4100], // 32
    [0.0000, -0.0200, 0.4500], // 33
    [0.0800, -0.0200, 0.4100], // 34
    [0.1600, -0.0200, 0.3700], // 35
    [-0.5400, 0.3500, 0.2600], // 36
    [-0.4500, 0.4000, 0.2800], // 37
    [-0.3500, 0.4000, 0.2900], // 38
    [-0.2600, 0.3500, 0.3100], // 39
    [-0.3500, 0.3000, 0.2900], // 40
    [-0.4500, 0.3000, 0.2800], // 41
    [0.2600, 0.3500, 0.3100], // 42
    [0.3500, 0.4000, 0.2900], // 43
    [0.4500, 0.4000, 0.2800], // 44
    [0.5400, 0.3500, 0.2600], // 45
    [0.4500, 0.3000, 0.2800], // 46
    [0.3500, 0.3000, 0.2900], // 47
    [-0.3000, -0.4200, 0.2800], // 48
    [-0.2000, -0.3400, 0.3000], // 49
    [-0.1000, -0.3100, 0.3200], // 50
    [0.0000, -0.3000, 0.3400], // 51
    [0.1000, -0.3100, 0.3200], // 52
    [0.2000, -0.3400, 0.3000], // 53
    [0.3000, -0.4200, 0.2800], // 54
    [0.2000, -0.5000, 0.3000], // 55
    [0.1000, -0.5350, 0.3200], // 56
    [0.0000, -0.5400, 0.3400], // 57
    [-0.1000, -0.5350, 0.3200], // 58
    [-0.2000, -0.5000, 0.3000], // 59
    [-0.2200, -0.4200, 0.2900], // 60
    [-0.1000, -0.3800, 0.3118], // 61
    [0.0000, -0.3750, 0.3300], // 62
    [0.1000, -0.3800, 0.3118], // 63
    [0.2200, -0.4200, 0.2900], // 64
    [0.1000, -0.4650, 0.3118], // 65
    [0.0000, -0.4700, 0.3300], // 66
    [-0.1000, -0.4650, 0.3118], // 67
];
