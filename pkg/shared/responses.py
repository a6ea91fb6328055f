from rest_framework.renderers import JSONRenderer


def handle_success(data=None, message="", exit_code=0):
    response = {
        "status": "success",
        "message": message,
        "data": data
    }
    return response, exit_code

def handle_error(errors=None, message="", exit_code=1):
    response = {
        "status": "error",
        "message": message,
        "errors": errors
    }
    return response, exit_code

def handle_validation_error(errors=None, message="Validation Error", exit_code=1):
    response = {
        "status": "fail",
        "message": message,
        "errors": errors
    }
    return response, exit_code

def render_outcome(response):
    """One-line JSON text of a command outcome."""
    return JSONRenderer().render(response).decode()
