"""Decoherent electron transport through a block-partitioned molecular chain.

The model: a Fock/overlap matrix pair describing a chain of nucleotide blocks
is symmetrically orthogonalized, rotated into a per-block eigenbasis, and
opened up with wide-band contacts on the two end blocks plus phase-breaking
probes on every interior block.  Transmission between the contacts (direct
plus probe-mediated) is integrated against the bias window to give current.

Energies are in eV throughout; currents come out in amperes.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import constants
from scipy.integrate import trapezoid
from scipy.special import expit

from xbar import runio
from xbar.ivtable import IVTable

KB_EV = constants.value("Boltzmann constant in eV/K")

# conductance quantum 2q^2/h (spin included), siemens
G0_S = 2.0 * constants.e**2 / constants.h

SYMMETRY_RTOL = 1e-12
OVERLAP_EIG_FLOOR = 1e-10

# Fermi factors decay below 1e-4 within ten thermal energies of the window.
WINDOW_KT_MARGIN = 10.0

DEFAULT_ENERGY_SPACING = 1e-3  # eV


def _check_symmetric(mat: np.ndarray, name: str) -> None:
    scale = max(1.0, float(np.max(np.abs(mat))))
    skew = float(np.max(np.abs(mat - mat.T)))
    if skew > SYMMETRY_RTOL * scale:
        raise ValueError(f"{name} is not symmetric: max |A - A^T| = {skew:.3e}")


def _block_slices(partition) -> list[slice]:
    edges = np.concatenate([[0], np.cumsum(partition)])
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


@dataclass
class QuantumSystem:
    """Fock/overlap input with its nucleotide block layout.

    partition lists orbitals per block in chain order; homo_energy is the
    reference the Fermi level is measured from (metadata, never used to
    modify the matrices).
    """

    fock: np.ndarray
    overlap: np.ndarray
    partition: tuple
    homo_energy: float

    def __post_init__(self):
        self.fock = np.array(self.fock, dtype=float)
        self.overlap = np.array(self.overlap, dtype=float)
        self.partition = tuple(int(p) for p in self.partition)
        self.homo_energy = float(self.homo_energy)
        if self.fock.ndim != 2 or self.fock.shape[0] != self.fock.shape[1]:
            raise ValueError("fock matrix must be square")
        if self.overlap.shape != self.fock.shape:
            raise ValueError("overlap shape does not match fock")
        if any(p < 1 for p in self.partition):
            raise ValueError("partition entries must be positive")
        if sum(self.partition) != self.n_orb:
            raise ValueError(
                f"partition sums to {sum(self.partition)}, expected {self.n_orb}"
            )
        _check_symmetric(self.fock, "fock")
        _check_symmetric(self.overlap, "overlap")
        lam_min = float(np.linalg.eigvalsh(self.overlap)[0])
        if lam_min <= OVERLAP_EIG_FLOOR:
            raise ValueError(
                f"overlap is not positive definite: smallest eigenvalue {lam_min:.3e}"
            )

    @property
    def n_orb(self) -> int:
        return self.fock.shape[0]

    @property
    def n_blocks(self) -> int:
        return len(self.partition)


@dataclass
class ContactProbeConfig:
    """Broadenings for the two contacts and the interior probes.

    left_block/right_block are zero-based block indices; right_block = None
    resolves to the last block.  Every other block carries a probe.
    """

    gamma_contact: float = 1.0  # eV
    gamma_probe: float = 0.010  # eV
    left_block: int = 0
    right_block: int | None = None

    def __post_init__(self):
        if self.gamma_contact <= 0:
            raise ValueError("gamma_contact must be positive")
        if self.gamma_probe < 0:
            raise ValueError("gamma_probe must be non-negative")

    def resolve(self, n_blocks: int):
        """(left, right, probe indices) for a chain of n_blocks blocks."""
        left = self.left_block
        right = self.right_block if self.right_block is not None else n_blocks - 1
        if not (0 <= left < n_blocks and 0 <= right < n_blocks):
            raise ValueError("contact block index out of range")
        probes = tuple(k for k in range(n_blocks) if k != left and k != right)
        return left, right, probes


@dataclass
class BiasPoint:
    """Bias voltage with the left Fermi level; the right one is tied to it."""

    v_bias: float
    e_fermi_left: float
    temperature: float = 300.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def e_fermi_right(self) -> float:
        # qV in eV equals the bias numerically
        return self.e_fermi_left + self.v_bias

    @property
    def kt(self) -> float:
        return KB_EV * self.temperature


@dataclass
class TransmissionSpectrum:
    energies: np.ndarray
    t_eff: np.ndarray
    t_coherent: np.ndarray

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=float)
        self.t_eff = np.asarray(self.t_eff, dtype=float)
        self.t_coherent = np.asarray(self.t_coherent, dtype=float)
        if self.energies.ndim != 1 or np.any(np.diff(self.energies) <= 0):
            raise ValueError("energies must be strictly increasing")
        if self.t_eff.shape != self.energies.shape:
            raise ValueError("t_eff length does not match energies")
        if self.t_coherent.shape != self.energies.shape:
            raise ValueError("t_coherent length does not match energies")


def lowdin_orthogonalize(fock, overlap) -> np.ndarray:
    """Symmetric orthogonalization S^{-1/2} F S^{-1/2}.

    Spectrum of the result equals the generalized spectrum of (F, S).
    Rejects overlap matrices whose smallest eigenvalue is at or below the
    positive-definiteness floor.
    """
    fock = np.asarray(fock, dtype=float)
    overlap = np.asarray(overlap, dtype=float)
    _check_symmetric(fock, "fock")
    _check_symmetric(overlap, "overlap")
    lam, q = np.linalg.eigh(overlap)
    if lam[0] <= OVERLAP_EIG_FLOOR:
        raise ValueError(
            f"overlap is not positive definite: smallest eigenvalue {lam[0]:.3e}"
        )
    s_inv_half = (q * lam**-0.5) @ q.T
    h_a = s_inv_half @ fock @ s_inv_half
    return 0.5 * (h_a + h_a.T)


def block_diagonalize(h_a, partition):
    """Rotate each diagonal block into its own eigenbasis.

    Returns (h_b, u) with h_b = u.T @ h_a @ u.  u is block diagonal and
    orthogonal, so the full spectrum is untouched; inter-block coupling is
    re-expressed, not removed.
    """
    h_a = np.asarray(h_a, dtype=float)
    if sum(partition) != h_a.shape[0]:
        raise ValueError(
            f"partition sums to {sum(partition)}, matrix has {h_a.shape[0]} orbitals"
        )
    u = np.zeros_like(h_a)
    for sl in _block_slices(partition):
        _, vec = np.linalg.eigh(h_a[sl, sl])
        u[sl, sl] = vec
    h_b = u.T @ h_a @ u
    return h_b, u


def ramp_fractions(n_blocks: int) -> np.ndarray:
    """Per-block potential-drop fractions of the applied bias.

    End blocks sit at 0 and 1; the interior carries the middle 20% of the
    drop linearly, so 40% falls across each contact.  Degenerate chains:
    a single interior block (or a lone block) sits at the 0.5 midpoint.
    """
    if n_blocks < 1:
        raise ValueError("need at least one block")
    if n_blocks == 1:
        return np.array([0.5])
    if n_blocks == 2:
        return np.array([0.0, 1.0])
    frac = np.empty(n_blocks)
    frac[0] = 0.0
    frac[-1] = 1.0
    if n_blocks == 3:
        frac[1] = 0.5
    else:
        k = np.arange(2, n_blocks)  # one-based interior indices 2..N-1
        frac[1:-1] = 0.4 + 0.2 * (k - 2) / (n_blocks - 3)
    return frac


def apply_bias_ramp(h_b, v_bias: float, partition) -> np.ndarray:
    """Shift each block's on-site energies by its share of the bias."""
    h_b = np.array(h_b, dtype=float)
    if sum(partition) != h_b.shape[0]:
        raise ValueError("partition does not match matrix size")
    if v_bias == 0.0:
        return h_b
    shifts = ramp_fractions(len(partition)) * v_bias
    for shift, sl in zip(shifts, _block_slices(partition)):
        idx = np.arange(sl.start, sl.stop)
        h_b[idx, idx] += shift
    return h_b


def broadening_vector(partition, config: ContactProbeConfig) -> np.ndarray:
    """Per-orbital level broadening from contacts and probes (eV)."""
    n_orb = int(sum(partition))
    left, right, probes = config.resolve(len(partition))
    slices = _block_slices(partition)
    gvec = np.zeros(n_orb)
    gvec[slices[left]] += config.gamma_contact
    gvec[slices[right]] += config.gamma_contact
    for k in probes:
        gvec[slices[k]] += config.gamma_probe
    return gvec


def retarded_green(energy: float, h_b, partition, config: ContactProbeConfig):
    """Solve [E - H - Sigma] G = I at one energy.

    Sigma is -i/2 times the broadening on each orbital.  Solved with dense
    LU (no explicit inverse).
    """
    h_b = np.asarray(h_b, dtype=float)
    n = h_b.shape[0]
    gvec = broadening_vector(partition, config)
    m = -h_b.astype(complex)
    idx = np.arange(n)
    m[idx, idx] += energy + 0.5j * gvec
    try:
        return np.linalg.solve(m, np.eye(n, dtype=complex))
    except np.linalg.LinAlgError as err:
        raise RuntimeError(
            f"singular transport matrix at E = {energy:.6f} eV"
        ) from err


def terminal_blocks(n_blocks: int, config: ContactProbeConfig):
    """Terminal ordering used by all transmission matrices.

    Index 0 is the left contact, 1 the right contact, then the interior
    probe blocks in chain order.  Returns (block indices, gammas).
    """
    left, right, probes = config.resolve(n_blocks)
    blocks = [left, right, *probes]
    gammas = np.array(
        [config.gamma_contact, config.gamma_contact]
        + [config.gamma_probe] * len(probes)
    )
    return blocks, gammas


def probe_transmissions(g_r, partition, config: ContactProbeConfig) -> np.ndarray:
    """Terminal-to-terminal transmissions Gamma_k Gamma_l sum |G_ab|^2.

    Rows/columns follow terminal_blocks ordering; the diagonal is zero.
    With a single block the 2x2 result still carries the contact-to-contact
    term since both contacts attach to that block.
    """
    g_r = np.asarray(g_r)
    slices = _block_slices(partition)
    blocks, gammas = terminal_blocks(len(partition), config)
    abs2 = np.abs(g_r) ** 2
    n_t = len(blocks)
    t = np.zeros((n_t, n_t))
    for k in range(n_t):
        for l in range(k + 1, n_t):
            val = gammas[k] * gammas[l] * float(
                abs2[slices[blocks[k]], slices[blocks[l]]].sum()
            )
            t[k, l] = val
            t[l, k] = val
    return t


def reflection_coefficients(t_terminals) -> np.ndarray:
    """R_kk = 1 - sum of transmissions out of terminal k."""
    t = np.asarray(t_terminals)
    return 1.0 - t.sum(axis=1)


def _probe_system(t_terminals):
    """W matrix of the zero-net-probe-current conditions."""
    t = np.asarray(t_terminals)
    p = t[2:, 2:]
    w = np.diag(t[2:, :].sum(axis=1)) - p
    return w


def probe_occupancies(t_terminals) -> np.ndarray:
    """Relative probe Fermi factors u_k = (f_k - f_R)/(f_L - f_R).

    These are the potentials the probes float to so that each carries zero
    net current; the left/right contacts sit at u = 1 and u = 0.
    """
    t = np.asarray(t_terminals)
    if t.shape[0] <= 2:
        return np.zeros(0)
    w = _probe_system(t)
    return np.linalg.solve(w, t[2:, 0])


def effective_transmission(t_terminals) -> float:
    """Contact-to-contact transmission with the probe contribution folded in.

    Adds to the direct term the current re-emitted by probes held at their
    zero-net-current potentials; the probe condition enters through a linear
    solve, never an explicit inverse.  A singular probe system (possible
    only with zero probe coupling) falls back to the direct term.
    """
    t = np.asarray(t_terminals)
    direct = float(t[0, 1])
    if t.shape[0] <= 2:
        return direct
    rowsums = t[2:, :].sum(axis=1)
    if np.all(rowsums == 0.0):
        return direct
    try:
        v = np.linalg.solve(_probe_system(t), t[2:, 1])
    except np.linalg.LinAlgError:
        return direct
    return direct + float(t[0, 2:] @ v)


def transmission_at(energy: float, h_b, partition, config: ContactProbeConfig):
    """(t_eff, t_coherent) at one energy."""
    g_r = retarded_green(energy, h_b, partition, config)
    t = probe_transmissions(g_r, partition, config)
    return effective_transmission(t), float(t[0, 1])


def transmission_spectrum(
    h_b, partition, config: ContactProbeConfig, energies, threads: int | None = None
) -> TransmissionSpectrum:
    """Evaluate the transmission over an energy grid.

    Grid points are independent; with threads > 1 they are farmed out to a
    thread pool (the LAPACK calls release the GIL) and merged back in grid
    order, so the result does not depend on the worker count.
    """
    energies = np.asarray(energies, dtype=float)
    threads = runio.resolve_threads(threads)
    if threads == 1 or energies.size < 4:
        pairs = [transmission_at(e, h_b, partition, config) for e in energies]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pairs = list(
                pool.map(lambda e: transmission_at(e, h_b, partition, config), energies)
            )
    t_eff = np.array([p[0] for p in pairs])
    t_coh = np.array([p[1] for p in pairs])
    return TransmissionSpectrum(energies, t_eff, t_coh)


def fermi_occupation(energy, mu: float, kt: float):
    """f(E) = 1/(1 + exp((E - mu)/kT)), overflow-safe."""
    return expit(-(np.asarray(energy, dtype=float) - mu) / kt)


def landauer_current(spectrum: TransmissionSpectrum, bias: BiasPoint) -> float:
    """Integrate the transmission against the bias window.

    Positive bias raises the right Fermi level, and the sign convention is
    chosen so that positive bias drives positive current.  The spectrum must
    cover both Fermi levels plus ten thermal energies on each side; the
    integrand is resampled on a grid fine enough to resolve the Fermi step
    even at sub-kelvin temperatures.
    """
    if bias.v_bias == 0.0:
        return 0.0
    kt = bias.kt
    mu_lo = min(bias.e_fermi_left, bias.e_fermi_right)
    mu_hi = max(bias.e_fermi_left, bias.e_fermi_right)
    lo = mu_lo - WINDOW_KT_MARGIN * kt
    hi = mu_hi + WINDOW_KT_MARGIN * kt
    energies = spectrum.energies
    if energies[0] > lo or energies[-1] < hi:
        raise ValueError(
            "spectrum window too narrow: have "
            f"[{energies[0]:.6f}, {energies[-1]:.6f}] eV, "
            f"need [{lo:.6f}, {hi:.6f}] eV"
        )
    h_fine = min(DEFAULT_ENERGY_SPACING, kt / 4.0)
    grid = np.union1d(
        np.arange(lo, hi + 0.5 * h_fine, h_fine),
        energies[(energies >= lo) & (energies <= hi)],
    )
    t = np.interp(grid, energies, spectrum.t_eff)
    window = fermi_occupation(grid, bias.e_fermi_right, kt) - fermi_occupation(
        grid, bias.e_fermi_left, kt
    )
    return float(G0_S * trapezoid(t * window, grid))


def orthogonal_block_hamiltonian(system: QuantumSystem):
    """Löwdin plus per-block rotation; the unbiased starting point for sweeps."""
    h_a = lowdin_orthogonalize(system.fock, system.overlap)
    return block_diagonalize(h_a, system.partition)


def iv_sweep(
    system: QuantumSystem,
    config: ContactProbeConfig,
    v_grid,
    delta_grid,
    temperature: float = 300.0,
    energy_spacing: float = DEFAULT_ENERGY_SPACING,
    threads: int | None = None,
    strand_id: str = "system",
) -> IVTable:
    """Current over a (bias, Fermi-offset) grid.

    For each point the left Fermi level sits at homo_energy + delta, the
    right one follows the bias, the ramped Hamiltonian is rebuilt from the
    same unbiased matrices (the structure itself never changes mid-sweep),
    and the transmission is integrated over the thermal window.  Sweep
    points are independent and computed in parallel when asked; the table
    is always assembled in grid order.
    """
    v_grid = np.asarray(v_grid, dtype=float)
    delta_grid = np.asarray(delta_grid, dtype=float)
    if v_grid.ndim != 1 or v_grid.size == 0 or np.any(np.diff(v_grid) <= 0):
        raise ValueError("v_grid must be non-empty and strictly increasing")
    if delta_grid.ndim != 1 or delta_grid.size == 0 or np.any(np.diff(delta_grid) <= 0):
        raise ValueError("delta_grid must be non-empty and strictly increasing")
    threads = runio.resolve_threads(threads)
    h_b0, _ = orthogonal_block_hamiltonian(system)
    kt = KB_EV * temperature
    ramped = {iv: apply_bias_ramp(h_b0, v, system.partition) for iv, v in enumerate(v_grid)}

    def point_current(idx):
        idl, iv = idx
        v = float(v_grid[iv])
        if v == 0.0:
            return 0.0
        bias = BiasPoint(v, system.homo_energy + float(delta_grid[idl]), temperature)
        lo = min(bias.e_fermi_left, bias.e_fermi_right) - WINDOW_KT_MARGIN * kt
        hi = max(bias.e_fermi_left, bias.e_fermi_right) + WINDOW_KT_MARGIN * kt
        # two spacings of slack so the coverage check never trips on rounding
        energies = np.arange(lo - 2 * energy_spacing, hi + 2.5 * energy_spacing, energy_spacing)
        spec = transmission_spectrum(ramped[iv], system.partition, config, energies, threads=1)
        return landauer_current(spec, bias)

    points = [(idl, iv) for idl in range(delta_grid.size) for iv in range(v_grid.size)]
    if threads == 1:
        currents = [point_current(p) for p in points]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            currents = list(pool.map(point_current, points))
    table = np.array(currents).reshape(delta_grid.size, v_grid.size)
    return IVTable(strand_id, v_grid, delta_grid, table)


def tight_binding_chain(
    n_blocks: int,
    block_size: int = 1,
    onsite: float = -5.2,
    intra_hop: float = 0.2,
    inter_hop: float = 0.1,
    onsite_jitter: float = 0.0,
    overlap_coupling: float = 0.0,
    homo_energy: float | None = None,
    seed: int | None = None,
) -> QuantumSystem:
    """Synthetic nearest-neighbor chain standing in for real Fock/overlap data.

    Blocks couple head-to-tail through a single inter_hop element; within a
    block, adjacent orbitals couple by intra_hop.  onsite_jitter draws
    uniform per-orbital disorder so tests can request random-but-seeded
    systems.  overlap_coupling puts that value on every hopping pair of the
    overlap matrix (keep it well below 0.5 for positive definiteness).
    """
    if n_blocks < 1 or block_size < 1:
        raise ValueError("need at least one block and one orbital per block")
    n_orb = n_blocks * block_size
    fock = np.zeros((n_orb, n_orb))
    overlap = np.eye(n_orb)
    rng = np.random.default_rng(seed)
    diag = np.full(n_orb, onsite)
    if onsite_jitter > 0:
        diag += rng.uniform(-onsite_jitter, onsite_jitter, n_orb)
    fock[np.arange(n_orb), np.arange(n_orb)] = diag
    slices = _block_slices([block_size] * n_blocks)
    for sl in slices:
        for a in range(sl.start, sl.stop - 1):
            fock[a, a + 1] = fock[a + 1, a] = intra_hop
    for b in range(n_blocks - 1):
        a, c = slices[b].stop - 1, slices[b + 1].start
        fock[a, c] = fock[c, a] = inter_hop
    if overlap_coupling != 0.0:
        pairs = np.nonzero(np.triu(fock, 1))
        overlap[pairs] = overlap_coupling
        overlap[pairs[1], pairs[0]] = overlap_coupling
    return QuantumSystem(
        fock,
        overlap,
        [block_size] * n_blocks,
        homo_energy if homo_energy is not None else onsite,
    )


def suggest_homo_energy(
    system: QuantumSystem,
    config: ContactProbeConfig | None = None,
    gap_reference: float = 0.0,
    e_min: float | None = None,
    e_max: float | None = None,
    spacing: float = DEFAULT_ENERGY_SPACING,
) -> float:
    """Propose a HOMO reference: the tallest zero-bias transmission peak
    below gap_reference.

    Only a proposal; occupancy counting is impossible from the matrices
    alone, so the caller stays responsible for the final homo_energy.
    """
    config = config or ContactProbeConfig()
    if e_max is None:
        e_max = gap_reference
    if e_min is None:
        e_min = gap_reference - 3.0
    h_b, _ = orthogonal_block_hamiltonian(system)
    energies = np.arange(e_min, e_max + 0.5 * spacing, spacing)
    spec = transmission_spectrum(h_b, system.partition, config, energies)
    t = spec.t_eff
    interior = (t[1:-1] > t[:-2]) & (t[1:-1] >= t[2:])
    peaks = np.where(interior)[0] + 1
    if peaks.size == 0:
        return float(energies[np.argmax(t)])
    best = peaks[np.argmax(t[peaks])]
    return float(energies[best])


def save_quantum_system(system: QuantumSystem, path) -> None:
    runio.dump_json(
        {
            "n_orb": system.n_orb,
            "partition": list(system.partition),
            "homo_energy_ev": system.homo_energy,
            "fock": system.fock.ravel().tolist(),
            "overlap": system.overlap.ravel().tolist(),
        },
        path,
    )


def load_quantum_system(path) -> QuantumSystem:
    """Read a system file; symmetry/definiteness are validated on load."""
    raw = runio.load_json(path)
    n_orb = int(runio.require(raw, "n_orb", path))
    partition = [int(p) for p in runio.require(raw, "partition", path)]
    homo = float(runio.require(raw, "homo_energy_ev", path))
    fock = np.array(runio.require(raw, "fock", path), dtype=float)
    overlap = np.array(runio.require(raw, "overlap", path), dtype=float)
    if fock.size != n_orb * n_orb:
        raise ValueError(f"{path}: fock has {fock.size} entries, expected {n_orb * n_orb}")
    if overlap.size != n_orb * n_orb:
        raise ValueError(
            f"{path}: overlap has {overlap.size} entries, expected {n_orb * n_orb}"
        )
    if not partition:
        raise ValueError(f"{path}: partition is empty")
    try:
        return QuantumSystem(
            fock.reshape(n_orb, n_orb), overlap.reshape(n_orb, n_orb), partition, homo
        )
    except ValueError as err:
        raise ValueError(f"{path}: {err}") from err
