//! Embedded periodic-table data for atomic numbers 1..=100.

/// Largest supported atomic number.
pub const MAX_Z: u8 = 100;

/// Avogadro constant, mol⁻¹.
pub const AVOGADRO: f64 = 6.022_140_76e23;

struct Element {
    symbol: &'static str,
    mass: f64,
    oxidation_states: &'static [i8],
}

macro_rules! el {
    ($s:literal, $m:literal, [$($o:literal),*]) => {
        Element { symbol: $s, mass: $m, oxidation_states: &[$($o),*] }
    };
}

// Standard atomic weights (IUPAC, conventional values) and common oxidation
// states in the spirit of the SMACT/ICSD defaults.
static TABLE: [Element; 100] = [
    el!("H", 1.008, [-1, 1]),
    el!("He", 4.002602, []),
    el!("Li", 6.94, [1]),
    el!("Be", 9.0121831, [2]),
    el!("B", 10.81, [3]),
    el!("C", 12.011, [-4, 2, 4]),
    el!("N", 14.007, [-3, 3, 5]),
    el!("O", 15.999, [-2]),
    el!("F", 18.998403163, [-1]),
    el!("Ne", 20.1797, []),
    el!("Na", 22.98976928, [1]),
    el!("Mg", 24.305, [2]),
    el!("Al", 26.9815385, [3]),
    el!("Si", 28.085, [-4, 4]),
    el!("P", 30.973761998, [-3, 3, 5]),
    el!("S", 32.06, [-2, 2, 4, 6]),
    el!("Cl", 35.45, [-1, 1, 3, 5, 7]),
    el!("Ar", 39.948, []),
    el!("K", 39.0983, [1]),
    el!("Ca", 40.078, [2]),
    el!("Sc", 44.955908, [3]),
    el!("Ti", 47.867, [2, 3, 4]),
    el!("V", 50.9415, [2, 3, 4, 5]),
    el!("Cr", 51.9961, [2, 3, 6]),
    el!("Mn", 54.938044, [2, 3, 4, 7]),
    el!("Fe", 55.845, [2, 3]),
    el!("Co", 58.933194, [2, 3]),
    el!("Ni", 58.6934, [2, 3]),
    el!("Cu", 63.546, [1, 2]),
    el!("Zn", 65.38, [2]),
    el!("Ga", 69.723, [3]),
    el!("Ge", 72.630, [-4, 2, 4]),
    el!("As", 74.921595, [-3, 3, 5]),
    el!("Se", 78.971, [-2, 2, 4, 6]),
    el!("Br", 79.904, [-1, 1, 3, 5]),
    el!("Kr", 83.798, [2]),
    el!("Rb", 85.4678, [1]),
    el!("Sr", 87.62, [2]),
    el!("Y", 88.90584, [3]),
    el!("Zr", 91.224, [4]),
    el!("Nb", 92.90637, [3, 5]),
    el!("Mo", 95.95, [3, 4, 6]),
    el!("Tc", 98.0, [4, 7]),
    el!("Ru", 101.07, [3, 4]),
    el!("Rh", 102.90550, [3]),
    el!("Pd", 106.42, [2, 4]),
    el!("Ag", 107.8682, [1]),
    el!("Cd", 112.414, [2]),
    el!("In", 114.818, [3]),
    el!("Sn", 118.710, [-4, 2, 4]),
    el!("Sb", 121.760, [-3, 3, 5]),
    el!("Te", 127.60, [-2, 2, 4, 6]),
    el!("I", 126.90447, [-1, 1, 3, 5, 7]),
    el!("Xe", 131.293, [2, 4, 6]),
    el!("Cs", 132.90545196, [1]),
    el!("Ba", 137.327, [2]),
    el!("La", 138.90547, [3]),
    el!("Ce", 140.116, [3, 4]),
    el!("Pr", 140.90766, [3]),
    el!("Nd", 144.242, [3]),
    el!("Pm", 145.0, [3]),
    el!("Sm", 150.36, [2, 3]),
    el!("Eu", 151.964, [2, 3]),
    el!("Gd", 157.25, [3]),
    el!("Tb", 158.92535, [3, 4]),
    el!("Dy", 162.500, [3]),
    el!("Ho", 164.93033, [3]),
    el!("Er", 167.259, [3]),
    el!("Tm", 168.93422, [3]),
    el!("Yb", 173.045, [2, 3]),
    el!("Lu", 174.9668, [3]),
    el!("Hf", 178.49, [4]),
    el!("Ta", 180.94788, [3, 5]),
    el!("W", 183.84, [4, 6]),
    el!("Re", 186.207, [4, 7]),
    el!("Os", 190.23, [4]),
    el!("Ir", 192.217, [3, 4]),
    el!("Pt", 195.084, [2, 4]),
    el!("Au", 196.966569, [1, 3]),
    el!("Hg", 200.592, [1, 2]),
    el!("Tl", 204.38, [1, 3]),
    el!("Pb", 207.2, [2, 4]),
    el!("Bi", 208.98040, [3]),
    el!("Po", 209.0, [-2, 2, 4]),
    el!("At", 210.0, [-1, 1]),
    el!("Rn", 222.0, [2]),
    el!("Fr", 223.0, [1]),
    el!("Ra", 226.0, [2]),
    el!("Ac", 227.0, [3]),
    el!("Th", 232.0377, [4]),
    el!("Pa", 231.03588, [5]),
    el!("U", 238.02891, [3, 4, 6]),
    el!("Np", 237.0, [5]),
    el!("Pu", 244.0, [4]),
    el!("Am", 243.0, [3]),
    el!("Cm", 247.0, [3]),
    el!("Bk", 247.0, [3]),
    el!("Cf", 251.0, [3]),
    el!("Es", 252.0, [3]),
    el!("Fm", 257.0, [3]),
];

fn entry(z: u8) -> Option<&'static Element> {
    if (1..=MAX_Z).contains(&z) {
        Some(&TABLE[z as usize - 1])
    } else {
        None
    }
}

pub fn is_valid_z(z: u32) -> bool {
    (1..=MAX_Z as u32).contains(&z)
}

pub fn symbol(z: u8) -> Option<&'static str> {
    entry(z).map(|e| e.symbol)
}

pub fn atomic_number(symbol: &str) -> Option<u8> {
    TABLE
        .iter()
        .position(|e| e.symbol == symbol)
        .map(|i| i as u8 + 1)
}

/// Atomic mass in g/mol.
pub fn mass(z: u8) -> Option<f64> {
    entry(z).map(|e| e.mass)
}

pub fn oxidation_states(z: u8) -> &'static [i8] {
    entry(z).map(|e| e.oxidation_states).unwrap_or(&[])
}

/// All element symbols ordered by atomic number.
pub fn symbols() -> impl Iterator<Item = &'static str> {
    TABLE.iter().map(|e| e.symbol)
}
