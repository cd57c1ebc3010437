from .controllers import (DomainError, LeadLagStack, PIController, abc_to_dq, dc_link_derivative,
                          dc_link_energy, dq_to_abc, lead_lag_output)
from .dfig import (DcLinkParams, Dfig, DfigParams, GscParams, PccVoltageController, PllParams,
                   RscParams, gsc_control_step, pcc_voltage_control_step, rsc_control_step,
                   sdc_attach)
from .synchronous import (ExciterParams, InfiniteBus, InitializationError, MachineParams,
                          SyncMachine, sync_machine_derivatives)
