from .didactic import (
    DidacticCnnParams,
    count_fully_connected_params,
    didactic_forward,
    didactic_forward_conv,
    didactic_gradients,
    didactic_loss,
    didactic_sgd_step,
    didactic_train,
    patch_matrix,
)
from .general import (
    GeneralCnnConfig,
    GeneralCnnModel,
    general_forward,
    general_train,
    init_model,
    loss_and_gradients,
    predict_hours,
    shape_chain,
    zero_model,
)
from .layers import conv2d_valid, pool, sigmoid
