"""SRIVC estimation of continuous-time output-error models with explicit
intersample behaviour, asymptotic bounds and Monte Carlo studies"""

from .lti import Hold
from .lti import ImproperTransferFunction
from .lti import Polynomial
from .lti import StateSpace
from .lti import ThetaVector
from .lti import TransferFunction
from .lti import are_coprime
from .lti import c2d
from .lti import filter_bank
from .lti import filter_ct
from .lti import is_hurwitz
from .lti import simulate
from .lti import tf_to_ss
from .lti import tf_to_theta
from .lti import theta_to_tf
from .SRIVC import CsvFormatError
from .SRIVC import DataRecord
from .SRIVC import NonHurwitzIterate
from .SRIVC import SingularNormalMatrix
from .SRIVC import SrivcConfig
from .SRIVC import SrivcEstimate
from .SRIVC import build_instrument
from .SRIVC import build_regressor
from .SRIVC import prefilter_output
from .SRIVC import srivc_estimate
from .SRIVC import srivc_step
from .SRIVC import theoretical_output
from .SRIVC import theoretical_regressor
from .SRIVC import theoretical_srivc_estimate
from .SRIVC import verify_converging_point
from .efficiency import CovKind
from .efficiency import CovarianceReport
from .efficiency import LyapunovError
from .efficiency import SensitivityBank
from .efficiency import SingularInformationMatrix
from .efficiency import build_sensitivity_bank
from .efficiency import crlb_asymptotic
from .efficiency import literature_crlb
from .efficiency import srivc_asymptotic_cov
from .efficiency import stationary_second_moment
from .montecarlo import AllRunsFailed
from .montecarlo import ExperimentConfig
from .montecarlo import McResult
from .montecarlo import check_excitation
from .montecarlo import generate_input
from .montecarlo import run_experiment
from .montecarlo import simulate_system
from .montecarlo import sweep_sample_size
