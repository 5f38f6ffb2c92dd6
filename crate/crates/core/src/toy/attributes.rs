use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Cube,
    Sphere,
    Cone,
    Cylinder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    Small,
    Large,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Cube, Shape::Sphere, Shape::Cone, Shape::Cylinder];

    pub fn token(self) -> &'static str {
        match self {
            Shape::Cube => "cube",
            Shape::Sphere => "sphere",
            Shape::Cone => "cone",
            Shape::Cylinder => "cylinder",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

    pub fn token(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [210, 40, 40],
            Color::Green => [40, 180, 60],
            Color::Blue => [40, 70, 210],
            Color::Yellow => [230, 210, 40],
        }
    }
}

impl SizeClass {
    pub const ALL: [SizeClass; 2] = [SizeClass::Small, SizeClass::Large];

    pub fn token(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Large => "large",
        }
    }

    /// Range of the continuous size scalar for this class.
    pub fn range(self) -> (f64, f64) {
        match self {
            SizeClass::Small => (0.6, 0.7),
            SizeClass::Large => (1.3, 1.4),
        }
    }

    pub fn of(size: f64) -> SizeClass {
        if size < 1.0 {
            SizeClass::Small
        } else {
            SizeClass::Large
        }
    }
}

/// Attribute tuple of a toy object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attributes {
    pub shape: Shape,
    pub color: Color,
    pub size: f64,
}

impl Attributes {
    pub fn size_class(&self) -> SizeClass {
        SizeClass::of(self.size)
    }

    /// Same shape, color and size class.
    pub fn same_classes(&self, other: &Attributes) -> bool {
        self.shape == other.shape
            && self.color == other.color
            && self.size_class() == other.size_class()
    }
}

/// Which attributes a view exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct VisibilityMask {
    pub shape: bool,
    pub color: bool,
    pub size: bool,
}

impl VisibilityMask {
    pub const FULL: VisibilityMask = VisibilityMask {
        shape: true,
        color: true,
        size: true,
    };

    pub const NONE: VisibilityMask = VisibilityMask {
        shape: false,
        color: false,
        size: false,
    };

    /// All 8 subsets, indexed by bits (shape = 1, color = 2, size = 4).
    pub fn from_bits(bits: u8) -> Self {
        VisibilityMask {
            shape: bits & 1 != 0,
            color: bits & 2 != 0,
            size: bits & 4 != 0,
        }
    }

    pub fn bits(self) -> u8 {
        self.shape as u8 | (self.color as u8) << 1 | (self.size as u8) << 2
    }

    pub fn count(self) -> usize {
        self.shape as usize + self.color as usize + self.size as usize
    }

    pub fn is_full(self) -> bool {
        self == Self::FULL
    }

    pub fn union(self, other: Self) -> Self {
        VisibilityMask {
            shape: self.shape || other.shape,
            color: self.color || other.color,
            size: self.size || other.size,
        }
    }
}

/// Attribute vocabulary: 4 shapes, 4 colors, 2 sizes.
pub const VOCABULARY: [&str; 10] = [
    "cube", "sphere", "cone", "cylinder", "red", "green", "blue", "yellow", "small", "large",
];

pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Multi-hot bag of attribute tokens present in `text`.
pub fn token_features(text: &str) -> [f64; VOCABULARY.len()] {
    let mut features = [0.0; VOCABULARY.len()];
    for word in words(text) {
        if let Some(i) = VOCABULARY.iter().position(|t| *t == word) {
            features[i] = 1.0;
        }
    }
    features
}

/// Attribute classes mentioned in a caption (first mention wins).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Mentions {
    pub shape: Option<Shape>,
    pub color: Option<Color>,
    pub size: Option<SizeClass>,
}

impl Mentions {
    pub fn parse(text: &str) -> Self {
        let mut m = Mentions::default();
        for word in words(text) {
            if m.shape.is_none() {
                m.shape = Shape::ALL.into_iter().find(|s| s.token() == word);
            }
            if m.color.is_none() {
                m.color = Color::ALL.into_iter().find(|c| c.token() == word);
            }
            if m.size.is_none() {
                m.size = SizeClass::ALL.into_iter().find(|s| s.token() == word);
            }
        }
        m
    }

    pub fn count(&self) -> usize {
        self.shape.is_some() as usize + self.color.is_some() as usize + self.size.is_some() as usize
    }

    /// Number of mentioned attributes that agree with `attributes`.
    pub fn correct(&self, attributes: &Attributes) -> usize {
        (self.shape == Some(attributes.shape)) as usize
            + (self.color == Some(attributes.color)) as usize
            + (self.size == Some(attributes.size_class())) as usize
    }
}
