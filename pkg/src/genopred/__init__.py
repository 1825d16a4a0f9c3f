"""Genomic prediction with random SNP effects.

Simulation, BLUP/GBLUP/SNP-BLUP solvers, Bayes A/B samplers and the
selection-bias experiments that compare shrunk and least-squares estimates.
"""

from .bayes import ChainConfig, PosteriorSummary, bayes_a, bayes_b, chain_summary, default_slab_prior
from .blup import (
    FamilySummary,
    ScanResult,
    best_predict_family_future,
    gblup,
    ls_scan,
    predict,
    shrink_ls,
    sire_blup,
    sire_blup_closed_form,
    snp_blup,
    solve_mme,
)
from .core import (
    GenotypeMatrix,
    ModelFit,
    NormalPrior,
    Pedigree,
    PhenotypeVector,
    RelationshipMatrix,
    ScaledInvChiSqPrior,
    SpikeSlabPrior,
    VarianceComponents,
    allele_frequencies,
    effective_qtl_count,
    expected_genetic_variance,
    genomic_relationship,
    pedigree_numerator_matrix,
)
from .evaluate import (
    accuracy_report,
    cross_validate,
    estimator_equivalence,
    fig2_experiment,
    selection_bias_report,
    truncation_experiment,
)
from .simulate import (
    SimulationRecipe,
    simulate_dataset,
    simulate_effects,
    simulate_genotypes,
    simulate_marker_scan,
    simulate_phenotypes,
    simulate_sire_families,
)

__version__ = "0.1.0"
